"""Turn dataset rows into model batches.

A batch stores each distinct instruction row once; ``window`` (B, N+1) points
into that row set, with the value ``len(op_ids)`` marking padding before a
trace start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import Dataset
from ..features import FeatureTable
from .model import LabelBatch


@dataclass
class Batch:
    op_ids: np.ndarray     # (U,)
    dense: np.ndarray      # (U, dense_dim)
    window: np.ndarray     # (B, N+1), values in [0, U]
    rows: np.ndarray       # (B,) dataset rows of the predicted instructions

    def __len__(self) -> int:
        return len(self.window)


def window_rows(rows: np.ndarray, starts: np.ndarray, context: int) -> np.ndarray:
    """Row index of each window slot, -1 before the trace start."""
    offs = np.arange(-context, 1)
    win = rows[:, None] + offs[None, :]
    win[win < starts[rows][:, None]] = -1
    return win


def make_batch(features: FeatureTable, rows: np.ndarray, starts: np.ndarray, context: int) -> Batch:
    rows = np.asarray(rows, np.int64)
    win = window_rows(rows, starts, context)
    valid = win >= 0
    uniq, inv = np.unique(win[valid], return_inverse=True)
    window = np.full(win.shape, len(uniq), np.int64)
    window[valid] = inv
    sub = features.take(uniq)
    return Batch(sub.opcode, sub.dense(), window, rows)


def labels_for(ds: Dataset, rows: np.ndarray) -> LabelBatch:
    return LabelBatch(ds.fetch[rows], ds.exec[rows], ds.mispred[rows], ds.dlevel[rows], ds.imiss[rows])


class BatchSource:
    """Shuffled minibatches over a dataset's kept samples."""

    def __init__(self, ds: Dataset, batch_size: int, context: int, seed: int = 0):
        if context != ds.context:
            from ..errors import DimensionMismatch
            raise DimensionMismatch(f"model context {context} != dataset context {ds.context}")
        self.ds = ds
        self.batch_size = batch_size
        self.context = context
        self.starts = ds.trace_start()
        self.rng = np.random.default_rng(seed)

    def epoch(self):
        order = self.ds.samples[self.rng.permutation(len(self.ds.samples))]
        for lo in range(0, len(order), self.batch_size):
            rows = order[lo:lo + self.batch_size]
            yield make_batch(self.ds.features, rows, self.starts, self.context), labels_for(self.ds, rows)

    def ordered(self, rows: np.ndarray | None = None, batch_size: int | None = None):
        rows = self.ds.samples if rows is None else rows
        bs = batch_size or self.batch_size
        for lo in range(0, len(rows), bs):
            r = rows[lo:lo + bs]
            yield make_batch(self.ds.features, r, self.starts, self.context), labels_for(self.ds, r)
