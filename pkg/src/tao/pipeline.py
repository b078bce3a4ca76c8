"""Glue shared by the command line, the experiment scripts and the tests."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dataset import Dataset, align, dataset_from_traces
from .features import FeatureSchema
from .refsim.config import MicroArchConfig
from .refsim.core import run_detailed, run_functional
from .refsim.programs import generate_program
from .sim import InstructionPredictions, SimReport, predict_trace, report


def programs_from_specs(specs) -> list:
    return [generate_program(s.seed, s.profile, s.length) for s in specs]


def _trace_pair(args):
    program, uarch, budget = args
    return run_functional(program, budget), run_detailed(program, uarch, budget)


def trace_pairs(programs, uarch: MicroArchConfig, budget: int, workers: int = 1):
    """(functional, detailed) per program, in program order."""
    jobs = [(p, uarch, budget) for p in programs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_trace_pair, jobs))
    return [_trace_pair(j) for j in jobs]


def build_for(programs, uarch: MicroArchConfig, budget: int, schema: FeatureSchema, context: int,
              workers: int = 1, dedupe: bool = True) -> Dataset:
    pairs = trace_pairs(programs, uarch, budget, workers)
    ds = dataset_from_traces([f for f, _ in pairs], [d for _, d in pairs], schema, context, dedupe)
    ds.meta = {"uarch": uarch.to_json(), "programs": [p.name for p in programs], "budget": budget}
    return ds


def label_mean_baseline(ds: Dataset) -> tuple[float, float]:
    """Constant per-instruction latencies: the training-set means of both labels."""
    return float(ds.fetch[ds.samples].mean()), float(ds.exec[ds.samples].mean())


def baseline_predictions(functional, fetch_mean: float, exec_mean: float) -> InstructionPredictions:
    n = len(functional)
    return InstructionPredictions(
        np.full(n, fetch_mean), np.full(n, exec_mean), np.zeros(n), np.tile([0, 1.0, 0, 0], (n, 1)),
        np.zeros(n), np.array([r.taken is not None for r in functional]),
        np.array([r.mem_addr is not None for r in functional]),
    )


def evaluate_programs(model, programs, uarch: MicroArchConfig, budget: int, window: int = 1000,
                      mode: str = "threshold", rounding: str = "cumulative") -> list[SimReport]:
    out = []
    for f, d in trace_pairs(programs, uarch, budget):
        pred = predict_trace(model, f)
        rep = report(pred, d, window, rounding, mode)
        rep.predictions = pred
        out.append(rep)
    return out


def label_report(detailed, window: int = 1000) -> SimReport:
    """Report built from the trace's own aligned labels (zero error by construction)."""
    pred = InstructionPredictions.from_labels(align(detailed))
    return report(pred, detailed, window, rounding="none")

