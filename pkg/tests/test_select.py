import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tao.errors import DegenerateMetrics, NonPSD, SpaceTooSmall, ValidationError
from tao.refsim import UARCH_A, generate_program, run_detailed, stats
from tao.refsim.config import DESIGN_SPACE, MicroArchConfig
from tao.refsim.trace import load_trace, save_trace
from tao.select import (
    DesignSample, distance_matrix, inverse_covariance, mahalanobis, measure, point_at, sample_designs,
    select_from_distances, select_pair,
)

SMALL = {"fetch_width": (2, 4), "rob_size": (32, 64, 96)}


def samples_from(X):
    return [DesignSample(MicroArchConfig(), tuple(map(float, row))) for row in X]


def brute_force_pair(X, S_inv):
    best, pair = -1.0, None
    for i, j in itertools.combinations(range(len(X)), 2):
        d = X[i] - X[j]
        v = np.sqrt(sum(d[a] * S_inv[a, b] * d[b] for a in range(len(d)) for b in range(len(d))))
        if v > best:
            best, pair = v, (i, j)
    return pair


def random_metrics(seed, n=16):
    rng = np.random.default_rng(seed)
    return np.abs(rng.normal([1.5, 0.1, 0.3, 0.05], [0.4, 0.05, 0.1, 0.02], size=(n, 4)))


# sampling

def test_full_grid_each_once():
    got = sample_designs(6, seed=1, space=SMALL)
    assert sorted((c.fetch_width, c.rob_size) for c in got) == sorted(
        itertools.product(SMALL["fetch_width"], SMALL["rob_size"]))


def test_sampling_deterministic_and_distinct():
    a = sample_designs(16, seed=3)
    assert a == sample_designs(16, seed=3)
    assert len({c.to_json().__repr__() for c in a}) == 16
    assert a != sample_designs(16, seed=4)


def test_space_too_small():
    with pytest.raises(SpaceTooSmall):
        sample_designs(7, seed=0, space=SMALL)
    with pytest.raises(ValidationError):
        sample_designs(1, seed=0)


def test_point_at_matches_lexicographic_grid():
    pts = [point_at(SMALL, i) for i in range(6)]
    assert pts == [dict(zip(SMALL, c)) for c in itertools.product(*SMALL.values())]
    last = point_at(DESIGN_SPACE, 0)
    assert all(last[k] == v[0] for k, v in DESIGN_SPACE.items())


# measurement

@pytest.fixture(scope="module")
def programs():
    return [generate_program(s, p, 60) for s, p in ((1, "memory"), (2, "branchy"))]


def test_single_program_metrics_equal_run(programs):
    cfgs = sample_designs(2, seed=0)
    got = measure(cfgs, programs[:1], budget=800)
    for c, s in zip(cfgs, got):
        m = stats(run_detailed(programs[0], c, 800))
        assert s.metrics == (m.cpi, m.l1_miss_rate, m.l2_miss_rate, m.mispredict_rate)


def test_duplicate_programs_same_average(programs):
    cfgs = [UARCH_A]
    a = measure(cfgs, programs, budget=500)
    b = measure(cfgs, programs + programs, budget=500)
    assert np.allclose(a[0].vector(), b[0].vector(), rtol=1e-15)


def test_metrics_recomputed_from_stored_traces(programs, tmp_path):
    c = sample_designs(2, seed=9)[1]
    for k, p in enumerate(programs):
        save_trace(tmp_path / f"{k}.jsonl", run_detailed(p, c, 600))
    ms = [stats(load_trace(tmp_path / f"{k}.jsonl")[0]) for k in range(len(programs))]
    expect = np.mean([[m.cpi, m.l1_miss_rate, m.l2_miss_rate, m.mispredict_rate] for m in ms], axis=0)
    assert np.allclose(measure([c], programs, budget=600)[0].vector(), expect, rtol=1e-14)


def test_measure_needs_programs():
    with pytest.raises(ValidationError):
        measure([UARCH_A], [])


def test_parallel_measure_matches(programs):
    cfgs = sample_designs(3, seed=2)
    assert measure(cfgs, programs, 400, workers=2) == measure(cfgs, programs, 400)


# distance

@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.lists(st.floats(-100, 100), min_size=4, max_size=4))
def test_identity_covariance_is_euclidean(x, y):
    assert mahalanobis(x, y, np.eye(4)) == pytest.approx(np.linalg.norm(np.subtract(x, y)), abs=1e-12, rel=1e-12)


@given(st.integers(0, 10_000))
def test_quadratic_form_oracle_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    S_inv = A @ A.T + 0.1 * np.eye(4)
    x, y = rng.normal(size=4), rng.normal(size=4)
    d = x - y
    q = sum(d[i] * S_inv[i, j] * d[j] for i in range(4) for j in range(4))
    assert mahalanobis(x, y, S_inv) == pytest.approx(np.sqrt(q), rel=1e-12)
    assert mahalanobis(x, y, S_inv) == mahalanobis(y, x, S_inv)
    assert mahalanobis(x, x, S_inv) == 0.0


def test_non_psd_rejected():
    with pytest.raises(NonPSD):
        mahalanobis([0, 0], [1, 1], np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NonPSD):
        mahalanobis([0, 0], [1, 1], np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NonPSD):
        mahalanobis([0], [1], np.ones((1, 2)))


def test_covariance_unbiased_and_ridge():
    X = random_metrics(0)
    S, S_inv, eps = inverse_covariance(X)
    assert np.allclose(S, (X - X.mean(0)).T @ (X - X.mean(0)) / (len(X) - 1))
    assert eps == 0.0 and np.allclose(S_inv @ S, np.eye(4), atol=1e-8)
    S3, _, eps3 = inverse_covariance(X[:3])
    assert eps3 == pytest.approx(1e-8 * np.trace(S3) / 4)


# pair selection

def test_three_design_example_picks_a_and_c():
    D = np.array([[0.00, 0.31, 0.48],
                  [0.31, 0.00, 0.22],
                  [0.48, 0.22, 0.00]])
    assert select_from_distances(D) == (0, 2)
    assert D[select_from_distances(D)] == 0.48


def test_two_samples_returns_that_pair():
    sel = select_pair(samples_from([[1.0, 0.1, 0.2, 0.01], [2.0, 0.3, 0.1, 0.02]]))
    assert sel.pair == (0, 1)


@pytest.mark.parametrize("seed", range(5))
def test_sixteen_designs_match_brute_force(seed):
    X = random_metrics(seed)
    sel = select_pair(samples_from(X))
    _, S_inv, _ = inverse_covariance(X)
    assert sel.pair == brute_force_pair(X, S_inv)


def test_identity_covariance_selects_max_euclidean():
    X = random_metrics(7)
    D = distance_matrix(X, np.eye(4))
    euclid = max(itertools.combinations(range(16), 2), key=lambda p: np.linalg.norm(X[p[0]] - X[p[1]]))
    assert select_from_distances(D) == euclid


@given(seed=st.integers(0, 10_000), col=st.integers(0, 3), scale=st.floats(1e-3, 1e3))
def test_column_scaling_keeps_pair(seed, col, scale):
    X = random_metrics(seed)
    Y = X.copy()
    Y[:, col] *= scale
    a, b = select_pair(samples_from(X)), select_pair(samples_from(Y))
    assert np.allclose(a.distances, b.distances, rtol=1e-7, atol=1e-9)
    assert a.pair == b.pair


def test_ties_break_lexicographically():
    D = np.array([[0, 1, 2, 0], [1, 0, 0, 2], [2, 0, 0, 1], [0, 2, 1, 0]], float)
    assert select_from_distances(D) == (0, 2)


def test_degenerate_and_invalid_metrics():
    with pytest.raises(DegenerateMetrics):
        select_pair(samples_from([[1, 0.1, 0.1, 0.1]] * 3))
    with pytest.raises(ValidationError):
        select_pair(samples_from([[1, 0.1, 0.1, 0.1], [-1, 0.1, 0.1, 0.1]]))
    with pytest.raises(ValidationError):
        select_from_distances(np.zeros((1, 1)))


def test_selection_serialises():
    sel = select_pair(samples_from(random_metrics(1, 4)))
    doc = sel.to_json()
    assert doc["pair"] == list(sel.pair) and len(doc["designs"]) == 4
    assert sel.metrics_csv().splitlines()[0] == "design_id,cpi,l1_miss_rate,l2_miss_rate,mispredict_rate"
