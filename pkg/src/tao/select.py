"""Pick the two most performance-divergent designs by Mahalanobis distance.

Each sampled design is summarised by [CPI, L1 miss rate, L2 miss rate,
branch misprediction rate] averaged over a set of programs.  The pair with
the largest distance under the inverse sample covariance is selected.
"""

from __future__ import annotations

import csv
import io
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetrics, NonPSD, SpaceTooSmall, ValidationError
from .refsim.config import DESIGN_SPACE, MicroArchConfig, config_from_point, grid_size
from .refsim.core import run_detailed, stats

METRIC_NAMES = ("cpi", "l1_miss_rate", "l2_miss_rate", "mispredict_rate")


@dataclass(frozen=True)
class DesignSample:
    config: MicroArchConfig
    metrics: tuple  # METRIC_NAMES order

    def vector(self) -> np.ndarray:
        return np.asarray(self.metrics, np.float64)


def sample_designs(n: int, seed: int, space: dict = DESIGN_SPACE) -> list[MicroArchConfig]:
    """``n`` distinct grid points drawn uniformly without replacement."""
    if n < 2:
        raise ValidationError("need at least two designs")
    size = grid_size(space)
    if size < n:
        raise SpaceTooSmall(f"design grid has {size} points, {n} requested")
    idx = random.Random(seed).sample(range(size), n)
    return [config_from_point(point_at(space, i)) for i in idx]


def point_at(space: dict, index: int) -> dict:
    """The ``index``-th point of the lexicographic grid (last key varies fastest)."""
    point = {}
    for key in reversed(list(space)):
        vals = space[key]
        index, r = divmod(index, len(vals))
        point[key] = vals[r]
    return {k: point[k] for k in space}


def _metrics_for(args) -> tuple:
    cfg, program, budget = args
    m = stats(run_detailed(program, cfg, budget))
    return (m.cpi, m.l1_miss_rate, m.l2_miss_rate, m.mispredict_rate)


def measure(configs: list[MicroArchConfig], programs: list, budget: int = 10_000,
            workers: int = 1) -> list[DesignSample]:
    """Detailed-simulate every (config, program) pair and average per config."""
    if not programs:
        raise ValidationError("measure needs at least one program")
    jobs = [(c, p, budget) for c in configs for p in programs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_metrics_for, jobs))
    else:
        rows = [_metrics_for(j) for j in jobs]
    arr = np.asarray(rows, np.float64).reshape(len(configs), len(programs), len(METRIC_NAMES))
    means = arr.mean(axis=1)
    return [DesignSample(c, tuple(float(x) for x in v)) for c, v in zip(configs, means)]


def check_psd(S_inv: np.ndarray, tol: float = 1e-10) -> None:
    S_inv = np.asarray(S_inv, np.float64)
    if S_inv.ndim != 2 or S_inv.shape[0] != S_inv.shape[1]:
        raise NonPSD(f"matrix of shape {S_inv.shape} is not square")
    scale = max(1.0, float(np.abs(S_inv).max()))
    if not np.allclose(S_inv, S_inv.T, rtol=0, atol=tol * scale):
        raise NonPSD("matrix is not symmetric")
    if np.linalg.eigvalsh((S_inv + S_inv.T) / 2).min() < -tol * scale:
        raise NonPSD("matrix has a negative eigenvalue")


def mahalanobis(x, y, S_inv, check: bool = True) -> float:
    d = np.asarray(x, np.float64) - np.asarray(y, np.float64)
    S_inv = np.asarray(S_inv, np.float64)
    if check:
        check_psd(S_inv)
    q = float(d @ S_inv @ d)
    return float(np.sqrt(max(q, 0.0)))


def inverse_covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Unbiased covariance, its (ridge-regularised if singular) inverse, and the ridge used."""
    X = np.asarray(X, np.float64)
    S = np.cov(X, rowvar=False, ddof=1)
    S = np.atleast_2d(S)
    eps = 0.0
    if np.linalg.matrix_rank(S) < S.shape[0]:
        eps = 1e-8 * float(np.trace(S)) / S.shape[0]
        S_reg = S + eps * np.eye(S.shape[0])
    else:
        S_reg = S
    S_inv = np.linalg.inv(S_reg)
    return S, (S_inv + S_inv.T) / 2, eps


def distance_matrix(X: np.ndarray, S_inv: np.ndarray) -> np.ndarray:
    n = len(X)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = mahalanobis(X[i], X[j], S_inv, check=False)
    return D


def argmax_pair(D: np.ndarray) -> tuple[int, int]:
    """Largest off-diagonal entry; ties go to the lexicographically first (i, j)."""
    best, pair = -1.0, (0, 1)
    n = len(D)
    for i in range(n):
        for j in range(i + 1, n):
            if D[i, j] > best:
                best, pair = D[i, j], (i, j)
    return pair


@dataclass
class Selection:
    pair: tuple[int, int]
    distances: np.ndarray
    covariance: np.ndarray
    epsilon: float
    samples: list

    def configs(self) -> tuple[MicroArchConfig, MicroArchConfig]:
        i, j = self.pair
        return self.samples[i].config, self.samples[j].config

    def to_json(self) -> dict:
        return {
            "pair": list(self.pair),
            "distance": float(self.distances[self.pair]),
            "distance_matrix": self.distances.tolist(),
            "covariance": self.covariance.tolist(),
            "epsilon": self.epsilon,
            "designs": [{"id": k, "config": s.config.to_json(),
                         **dict(zip(METRIC_NAMES, s.metrics))} for k, s in enumerate(self.samples)],
        }

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("design_id",) + METRIC_NAMES)
        for k, s in enumerate(self.samples):
            w.writerow([k] + [f"{v:.8g}" for v in s.metrics])
        return buf.getvalue()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def select_pair(samples: list[DesignSample]) -> Selection:
    if len(samples) < 2:
        raise ValidationError("select_pair needs at least two samples")
    X = np.stack([s.vector() for s in samples])
    if not np.isfinite(X).all() or (X < 0).any():
        raise ValidationError("design metrics must be finite and non-negative")
    if np.all(X == X[0]):
        raise DegenerateMetrics("all designs have identical metrics")
    S, S_inv, eps = inverse_covariance(X)
    D = distance_matrix(X, S_inv)
    return Selection(argmax_pair(D), D, S, eps, list(samples))


def select_from_distances(D: np.ndarray) -> tuple[int, int]:
    """Pair choice from a precomputed distance matrix."""
    D = np.asarray(D, np.float64)
    if D.shape[0] < 2 or D.shape[0] != D.shape[1]:
        raise ValidationError("distance matrix must be square with at least two designs")
    return argmax_pair(D)
