import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tao.dataset import align
from tao.errors import NegativeLatency, PartitionTooSmall, SchemaMismatch, ValidationError
from tao.features import FeatureSchema
from tao.nn import ModelConfig, TaoModel
from tao.refsim import UARCH_A, UARCH_B, generate_program, run_detailed, run_functional, stats
from tao.sim import (
    PHASE_HEADER, InstructionPredictions, cpi_error, default_warmup, event_counts,
    metrics_from_predictions, partition_bounds, partitioned_predictions, phase_rows, predict_trace,
    recurrence, report, round_latencies, simulate_parallel, workers_from_env,
)

from conftest import UARCHS
from test_dataset import worked_trace

SCHEMA = FeatureSchema(n_b=32, n_q=4, n_m=6)


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(context=8, embed_dim=8, heads=2, d_op=4, d_cat=4, hidden=8)
    m = TaoModel(cfg, SCHEMA, seed=11)
    m.arch["head.fetch_cycles.b"].data[:] = 1.5
    m.arch["head.exec_cycles.b"].data[:] = 6.0
    return m


@pytest.fixture(scope="module")
def trace():
    return run_functional(generate_program(5, "mixed", 120), 3000)


# recurrence

def test_recurrence_hand_case():
    total, clocks, retires = recurrence([1, 2], [3, 1])
    assert clocks.tolist() == [1, 3] and retires.tolist() == [4, 4] and total == 4


def test_recurrence_edge_cases():
    assert recurrence([0, 0, 0], [0, 0, 0])[0] == 0
    assert recurrence([], [])[0] == 0
    with pytest.raises(NegativeLatency, match="instruction 1"):
        recurrence([1, -1], [0, 0])
    with pytest.raises(ValidationError):
        recurrence([1, 2], [1])


def test_worked_trace_total_25():
    p = InstructionPredictions.from_labels(align(worked_trace()))
    assert metrics_from_predictions(p, rounding="none").total_cycles == 25


@given(st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=300))
def test_cumulative_rounding_bounds_total_error(f):
    f = np.asarray(f)
    e = np.zeros_like(f)
    fr, er = round_latencies(f, e, "cumulative")
    assert (fr >= 0).all()
    assert abs(fr.sum() - f.sum()) <= 0.5 + 1e-9
    pr, _ = round_latencies(f, e, "per_instruction")
    assert np.array_equal(pr, np.rint(f))


def test_rounding_clamps_negatives():
    f, e = round_latencies(np.array([-2.0, 1.4]), np.array([-1.0, 2.6]), "none")
    assert f.tolist() == [0.0, 1.4] and e.tolist() == [0.0, 2.6]
    with pytest.raises(ValueError):
        round_latencies(f, e, "floor")


# reports

def test_cpi_error_formula():
    assert cpi_error(1.1, 1.0) == pytest.approx(10.0)


@given(seed=st.integers(0, 5000), profile=st.sampled_from(["compute", "memory", "branchy", "mixed"]),
       u=st.sampled_from(UARCHS))
def test_label_identity_closure(seed, profile, u):
    d = run_detailed(generate_program(seed, profile, 60), u, 1500)
    pred = InstructionPredictions.from_labels(align(d))
    for rounding in ("none", "cumulative", "per_instruction"):
        rep = report(pred, d, window=200, rounding=rounding)
        assert rep.cpi_error_pct == 0.0
        assert all(v == 0.0 for v in rep.errors().values())
        for row in rep.phase_rows:
            assert row["cpi_pred"] == row["cpi_truth"]
            assert row["l1d_mpki_pred"] == row["l1d_mpki_truth"]
            assert row["br_mpki_pred"] == row["br_mpki_truth"]


def test_window_sums_reconcile(model, trace):
    pred = predict_trace(model, trace)
    m = metrics_from_predictions(pred)
    rows = phase_rows(pred, 700)
    assert sum(r["instructions"] for r in rows) == len(trace)
    assert sum(r["cycles"] for r in rows) == m.total_cycles
    assert sum(r["l1d_mpki"] * r["instructions"] for r in rows) == pytest.approx(m.l1d_mpki * len(trace))


def test_event_count_modes():
    p = InstructionPredictions(
        np.ones(4), np.ones(4), np.array([0.6, 0.4, 0.9, 0.0]),
        np.array([[1, 0, 0, 0], [0, 0.2, 0.7, 0.1], [0, 0.6, 0.3, 0.1], [0, 0.1, 0.2, 0.7]], float),
        np.array([0.5, 0.2, 0.0, 0.0]),
        np.array([True, True, False, False]), np.array([False, True, True, True]),
    )
    t = event_counts(p, "threshold", 0.5)
    assert (t.l1d_accesses, t.l1d_misses, t.l2_misses, t.mispredictions, t.icache_misses) == (3, 2, 1, 1, 1)
    e = event_counts(p, "expected")
    assert e.mispredictions == pytest.approx(1.0)
    assert e.l1d_misses == pytest.approx(0.8 + 0.4 + 0.9)
    with pytest.raises(ValueError):
        event_counts(p, "median")


def test_report_serialisation(model, trace):
    d = run_detailed(generate_program(5, "mixed", 120), UARCH_A, 3000)
    rep = report(predict_trace(model, trace), d, window=1000)
    doc = json.loads(rep.dumps())
    assert doc["cpi_error_pct"] == rep.cpi_error_pct
    assert set(doc["errors_pct"]) >= {"cpi", "l1d_mpki", "branch_mpki"}
    lines = rep.phase_csv().splitlines()
    assert lines[0] == ",".join(PHASE_HEADER)
    assert len(lines) == 1 + 3

    bare = report(predict_trace(model, trace), None)
    assert bare.cpi_error_pct is None and bare.truth is None and bare.errors() == {}
    assert bare.phase_csv().splitlines()[1].split(",")[2] == ""


def test_truth_length_checked(model, trace):
    d = run_detailed(generate_program(5, "mixed", 120), UARCH_A, 2999)
    with pytest.raises(ValidationError):
        report(predict_trace(model, trace), d)


# prediction

def test_predictions_deterministic(model, trace):
    assert predict_trace(model, trace).equals(predict_trace(model, trace))


def test_single_instruction_trace(model, trace):
    p = predict_trace(model, trace[:1])
    assert len(p) == 1 and np.isfinite(p.fetch).all()


def test_schema_mismatch(model, trace):
    with pytest.raises(SchemaMismatch):
        predict_trace(model, trace, schema=FeatureSchema())


def test_block_size_does_not_change_predictions(model, trace):
    assert predict_trace(model, trace, block=64).equals(predict_trace(model, trace, block=64))
    a = predict_trace(model, trace[:500], block=50)
    b = predict_trace(model, trace[:500], block=50)
    assert a.equals(b)


# partitioned simulation

def test_partition_bounds_cover_trace():
    for n, parts in ((10, 3), (10_000, 4), (7, 7)):
        b = partition_bounds(n, parts)
        assert b[0][0] == 0 and b[-1][1] == n
        assert sum(hi - lo for lo, hi in b) == n
        assert all(b[k][1] == b[k + 1][0] for k in range(parts - 1))


def test_single_partition_is_sequential(model, trace):
    seq = predict_trace(model, trace)
    assert partitioned_predictions(model, trace, 1, warmup=0).equals(seq)


@given(parts=st.integers(2, 6), extra=st.integers(0, 20))
def test_partitioned_equals_sequential(model, trace, parts, extra):
    sub = trace[:1200]
    W = default_warmup(SCHEMA, model.cfg.context) + extra
    seq = predict_trace(model, sub)
    par = partitioned_predictions(model, sub, parts, warmup=W)
    assert len(par) == len(sub)
    assert par.equals(seq)


def test_parallel_workers_match(model, trace):
    a = partitioned_predictions(model, trace, 3, workers=1)
    b = partitioned_predictions(model, trace, 3, workers=2)
    assert a.equals(b)


def test_replay_warmup_runs_and_snapshot_is_exact(model, trace):
    seq = predict_trace(model, trace)
    rep = partitioned_predictions(model, trace, 4, feature_warmup="replay")
    snap = partitioned_predictions(model, trace, 4, feature_warmup="snapshot")
    assert snap.equals(seq)
    assert len(rep) == len(seq)


def test_partition_too_small(model, trace):
    with pytest.raises(PartitionTooSmall):
        partitioned_predictions(model, trace[:40], 4, warmup=10)


def test_total_is_recurrence_over_concatenation(model, trace):
    d = run_detailed(generate_program(5, "mixed", 120), UARCH_B, 3000)
    rep = simulate_parallel(model, trace, parts=3, truth=d, window=500)
    f, e = round_latencies(rep.predictions.fetch, rep.predictions.exec, "cumulative")
    assert rep.predicted.total_cycles == recurrence(f, e)[0]
    assert rep.truth.total_cycles == stats(d).total_cycles
    assert rep.settings["parts"] == 3


def test_workers_from_env(monkeypatch):
    monkeypatch.setenv("TAO_WORKERS", "3")
    assert workers_from_env(None) == 3
    assert workers_from_env(2) == 2
    monkeypatch.delenv("TAO_WORKERS")
    assert workers_from_env(None) == 1
