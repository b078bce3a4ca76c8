"""Model-driven simulation of functional traces.

Predicted per-instruction fetch and execution latencies are turned into
cycles by the retire-clock recurrence

    clock_i  = clock_{i-1} + fetch_i        (clock_{-1} = 0)
    retire_i = clock_i + exec_i

whose last retire clock is the program's cycle count.  Event counts (cache
misses, branch mispredictions) come from the classification heads.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import DLEVEL_CLASSES, DLEVEL_INDEX, align
from .errors import NegativeLatency, PartitionTooSmall, SchemaMismatch, ValidationError
from .features import FeatureSchema, FeatureTable, featurize_trace
from .nn.model import TaoModel, adapt, attend, embed, heads
from .refsim.core import PerfMetrics, stats

PHASE_HEADER = ("window", "cpi_pred", "cpi_truth", "l1d_mpki_pred", "l1d_mpki_truth",
                "br_mpki_pred", "br_mpki_truth")
_L2, _MEM = DLEVEL_INDEX["L2"], DLEVEL_INDEX["MEM"]


# recurrence

def recurrence(fetch, exec_) -> tuple[float, np.ndarray, np.ndarray]:
    """Return (total cycles, fetch clocks, retire clocks)."""
    f = np.asarray(fetch)
    e = np.asarray(exec_)
    if f.shape != e.shape:
        raise ValidationError(f"fetch and exec lengths differ ({f.shape} vs {e.shape})")
    if (f < 0).any() or (e < 0).any():
        k = int(np.flatnonzero((f < 0) | (e < 0))[0])
        raise NegativeLatency(f"negative latency at instruction {k}")
    clocks = np.cumsum(f)
    retires = clocks + e
    total = retires[-1] if len(retires) else 0
    return total.item() if hasattr(total, "item") else total, clocks, retires


def round_latencies(fetch: np.ndarray, exec_: np.ndarray, mode: str = "cumulative"):
    """Clamp at zero and convert to integer cycles.

    ``cumulative`` rounds the running fetch clock and differences it, so the
    rounding error of the total stays below one cycle; ``per_instruction``
    rounds each value on its own; ``none`` only clamps.
    """
    f = np.maximum(np.asarray(fetch, np.float64), 0.0)
    e = np.maximum(np.asarray(exec_, np.float64), 0.0)
    if mode == "none":
        return f, e
    if mode == "per_instruction":
        return np.rint(f).astype(np.int64), np.rint(e).astype(np.int64)
    if mode == "cumulative":
        c = np.rint(np.cumsum(f)).astype(np.int64)
        return np.diff(c, prepend=0), np.rint(e).astype(np.int64)
    raise ValueError(f"unknown rounding mode {mode!r}")


# per-instruction predictions

@dataclass
class InstructionPredictions:
    fetch: np.ndarray          # (T,) raw regression output
    exec: np.ndarray           # (T,)
    mispred_prob: np.ndarray   # (T,)
    dlevel_prob: np.ndarray    # (T, 4) over DLEVEL_CLASSES
    icache_prob: np.ndarray    # (T,)
    is_branch: np.ndarray      # (T,) bool, from the functional trace
    is_mem: np.ndarray         # (T,) bool

    def __len__(self) -> int:
        return len(self.fetch)

    def slice(self, lo: int, hi: int) -> "InstructionPredictions":
        return InstructionPredictions(*(getattr(self, f)[lo:hi] for f in _PRED_FIELDS))

    @classmethod
    def concat(cls, parts: list["InstructionPredictions"]) -> "InstructionPredictions":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in _PRED_FIELDS))

    def equals(self, other: "InstructionPredictions") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _PRED_FIELDS)

    @classmethod
    def from_labels(cls, adjusted) -> "InstructionPredictions":
        """Ground-truth labels dressed as predictions (probabilities 0/1)."""
        n = len(adjusted)
        dl = np.zeros((n, len(DLEVEL_CLASSES)))
        dl[np.arange(n), [DLEVEL_INDEX[a.labels.dlevel] for a in adjusted]] = 1.0
        return cls(
            np.array([a.labels.fetch for a in adjusted], np.float64),
            np.array([a.labels.exec for a in adjusted], np.float64),
            np.array([a.labels.mispredicted for a in adjusted], np.float64),
            dl,
            np.array([a.labels.icache_miss for a in adjusted], np.float64),
            np.array([a.taken is not None for a in adjusted]),
            np.array([a.mem_addr is not None for a in adjusted]),
        )


_PRED_FIELDS = ("fetch", "exec", "mispred_prob", "dlevel_prob", "icache_prob", "is_branch", "is_mem")


def _check_schema(model: TaoModel, schema: FeatureSchema | None) -> FeatureSchema:
    if schema is not None and schema.hash() != model.schema.hash():
        raise SchemaMismatch(f"trace schema {schema.hash()} != checkpoint schema {model.schema.hash()}")
    return model.schema


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def predict_rows(model: TaoModel, feats: FeatureTable, lo: int, hi: int, block: int = 128,
                 origin: int = 0) -> InstructionPredictions:
    """Predict rows ``[lo, hi)`` of ``feats``.

    Row ``origin`` is treated as the trace start: window slots before it are
    padding.  Every block evaluates exactly ``block`` windows (the last one
    is filled with copies of its final window), so an instruction's
    prediction does not depend on where block boundaries fall.
    """
    m = model.frozen()
    N = m.cfg.context
    arch = m.arch
    out = []
    offs = np.arange(-N, 1)
    for b0 in range(lo, hi, block):
        rows = np.arange(b0, min(b0 + block, hi))
        n = len(rows)
        if n < block:
            rows = np.concatenate([rows, np.full(block - n, rows[-1])])
        win = rows[:, None] + offs[None, :]
        win[win < origin] = -1
        valid = win >= 0
        uniq, inv = np.unique(win[valid], return_inverse=True)
        window = np.full(win.shape, len(uniq), np.int64)
        window[valid] = inv
        sub = feats.take(uniq)
        a = adapt(arch, embed(m.shared, m.schema, sub.opcode, sub.dense()))
        h = attend(arch, m.cfg, a, window)
        p = heads(arch, h)
        out.append((p.fetch.data[:n], p.exec.data[:n], _sigmoid(p.br_logit.data[:n]),
                    _softmax(p.dl_logits.data[:n]), _sigmoid(p.ic_logit.data[:n])))
    sl = feats.slice(lo, hi)
    if not out:
        z = np.zeros(0)
        return InstructionPredictions(z, z, z, np.zeros((0, len(DLEVEL_CLASSES))), z,
                                      np.zeros(0, bool), np.zeros(0, bool))
    cols = [np.concatenate([o[j] for o in out]) for j in range(5)]
    return InstructionPredictions(*cols, sl.flags[:, 2].astype(bool),
                                  (sl.flags[:, 0] | sl.flags[:, 1]).astype(bool))


def predict_trace(model: TaoModel, trace, schema: FeatureSchema | None = None,
                  block: int = 128) -> InstructionPredictions:
    """Sequential prediction over a whole functional trace."""
    schema = _check_schema(model, schema)
    feats = featurize_trace(trace, schema)
    return predict_rows(model, feats, 0, len(feats), block)


# partitioned simulation

def default_warmup(schema: FeatureSchema, context: int) -> int:
    return max(schema.n_m, 2 * schema.n_q, context)


def partition_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    edges = [round(k * n / parts) for k in range(parts + 1)]
    return list(zip(edges[:-1], edges[1:]))


def _chunk_job(args):
    model, view, lo, hi, block = args
    # rows before the chunk view are padding, exactly as before a trace start
    return predict_rows(model, view, lo, hi, block)


def partitioned_predictions(model: TaoModel, trace, parts: int, warmup: int | None = None,
                            schema: FeatureSchema | None = None, workers: int = 1,
                            block: int = 128, feature_warmup: str = "snapshot") -> InstructionPredictions:
    """Predict a trace as ``parts`` contiguous chunks, each warmed on ``warmup`` instructions.

    Feature state at a chunk boundary is either the exact snapshot taken
    during one cheap functional replay (``snapshot``) or rebuilt from an
    empty state over the warmup instructions only (``replay``, approximate).
    The warmup rows also supply the attention context of the chunk's first
    instructions; their own predictions are discarded.
    """
    schema = _check_schema(model, schema)
    if parts < 1:
        raise ValidationError("partition count must be >= 1")
    W = default_warmup(schema, model.cfg.context) if warmup is None else warmup
    if W < 0:
        raise ValidationError("warmup must be >= 0")
    bounds = partition_bounds(len(trace), parts)
    for k, (lo, hi) in enumerate(bounds):
        if parts > 1 and hi - lo <= W:
            raise PartitionTooSmall(f"chunk {k} has {hi - lo} instructions, warmup is {W}")
    if feature_warmup not in ("snapshot", "replay"):
        raise ValueError(f"unknown feature_warmup {feature_warmup!r}")
    jobs = []
    if feature_warmup == "snapshot":
        state = None
        prev = 0
        for lo, hi in bounds:
            s = max(0, lo - W)
            # advance the snapshot to the start of this chunk's warmup
            _, state = featurize_trace(trace[prev:s], schema, state, return_state=True)
            view = featurize_trace(trace[s:hi], schema, state)
            prev = s
            jobs.append((model, view, lo - s, hi - s, block))
    else:
        for lo, hi in bounds:
            s = max(0, lo - W)
            jobs.append((model, featurize_trace(trace[s:hi], schema), lo - s, hi - s, block))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_chunk_job, jobs))
    else:
        outs = [_chunk_job(j) for j in jobs]
    return InstructionPredictions.concat(outs)


# metrics and reports

COUNT_MODES = ("threshold", "expected")


@dataclass
class EventCounts:
    l1d_accesses: float
    l1d_misses: float
    l2_misses: float
    branches: float
    mispredictions: float
    icache_misses: float


def event_counts(p: InstructionPredictions, mode: str = "threshold", threshold: float = 0.5) -> EventCounts:
    """Cache-miss and misprediction counts from the classification heads.

    Only memory instructions contribute data-access events and only
    conditional branches contribute mispredictions.  ``threshold`` counts an
    event when its probability reaches the threshold (for the access level:
    when the arg-max over L1/L2/MEM is a miss); ``expected`` sums the
    probabilities.
    """
    if mode not in COUNT_MODES:
        raise ValueError(f"unknown count mode {mode!r}")
    dl = p.dlevel_prob[p.is_mem]
    br = p.mispred_prob[p.is_branch]
    if mode == "expected":
        tot = dl[:, 1:].sum(axis=1)
        tot = np.where(tot > 0, tot, 1.0)
        l1m = float(((dl[:, _L2] + dl[:, _MEM]) / tot).sum())
        l2m = float((dl[:, _MEM] / tot).sum())
        mp = float(br.sum())
        im = float(p.icache_prob.sum())
    else:
        lvl = dl[:, 1:].argmax(axis=1) + 1 if len(dl) else np.zeros(0, int)
        l1m = int((lvl >= _L2).sum())
        l2m = int((lvl == _MEM).sum())
        mp = int((br >= threshold).sum())
        im = int((p.icache_prob >= threshold).sum())
    return EventCounts(int(p.is_mem.sum()), l1m, l2m, int(p.is_branch.sum()), mp, im)


def metrics_from_predictions(p: InstructionPredictions, rounding: str = "cumulative",
                             mode: str = "threshold", threshold: float = 0.5) -> PerfMetrics:
    n = len(p)
    if n == 0:
        raise ValidationError("no instructions to summarise")
    f, e = round_latencies(p.fetch, p.exec, rounding)
    total, _, _ = recurrence(f, e)
    c = event_counts(p, mode, threshold)
    k = 1000.0 / n
    return PerfMetrics(
        cpi=total / n, l1d_mpki=c.l1d_misses * k, l2_mpki=c.l2_misses * k,
        branch_mpki=c.mispredictions * k, l1i_mpki=c.icache_misses * k,
        mispredict_rate=c.mispredictions / c.branches if c.branches else 0.0,
        total_cycles=total, instruction_count=n, l1d_accesses=c.l1d_accesses,
        l1d_misses=c.l1d_misses, l2_misses=c.l2_misses, branches=c.branches,
        mispredictions=c.mispredictions,
    )


def phase_rows(p: InstructionPredictions, window: int, rounding: str = "cumulative",
               mode: str = "threshold", threshold: float = 0.5) -> list[dict]:
    """Per-window CPI and MPKI; window cycles are retire-clock advances, so they sum to the total."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    f, e = round_latencies(p.fetch, p.exec, rounding)
    _, _, retires = recurrence(f, e)
    rows = []
    prev = 0
    for w, lo in enumerate(range(0, len(p), window)):
        hi = min(lo + window, len(p))
        end = retires[hi - 1]
        c = event_counts(p.slice(lo, hi), mode, threshold)
        n = hi - lo
        rows.append({"window": w, "instructions": n, "cycles": end - prev, "cpi": (end - prev) / n,
                     "l1d_mpki": 1000.0 * c.l1d_misses / n, "br_mpki": 1000.0 * c.mispredictions / n})
        prev = end
    return rows


def _num(x):
    return x.item() if hasattr(x, "item") else x


@dataclass
class SimReport:
    predicted: PerfMetrics
    truth: PerfMetrics | None = None
    cpi_error_pct: float | None = None
    phase_rows: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    predictions: InstructionPredictions | None = field(default=None, repr=False, compare=False)

    def errors(self) -> dict:
        """Relative errors (percent) of every headline metric against truth."""
        if self.truth is None:
            return {}
        out = {}
        for k in ("cpi", "l1d_mpki", "l2_mpki", "branch_mpki", "l1i_mpki"):
            t, q = getattr(self.truth, k), getattr(self.predicted, k)
            out[k] = abs(q - t) / t * 100.0 if t else (0.0 if q == 0 else float("inf"))
        return out

    def to_json(self) -> dict:
        d = {
            "predicted": {k: _num(v) for k, v in asdict(self.predicted).items()},
            "truth": None if self.truth is None else {k: _num(v) for k, v in asdict(self.truth).items()},
            "cpi_error_pct": self.cpi_error_pct,
            "errors_pct": self.errors(),
            "phase_rows": [{k: _num(v) for k, v in r.items()} for r in self.phase_rows],
            "settings": self.settings,
        }
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def phase_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PHASE_HEADER)
        for r in self.phase_rows:
            w.writerow([r["window"], _fmt(r["cpi_pred"]), _fmt(r.get("cpi_truth")),
                        _fmt(r["l1d_mpki_pred"]), _fmt(r.get("l1d_mpki_truth")),
                        _fmt(r["br_mpki_pred"]), _fmt(r.get("br_mpki_truth"))])
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6g}"


def cpi_error(pred_cpi: float, truth_cpi: float) -> float:
    return abs(pred_cpi - truth_cpi) / truth_cpi * 100.0


def report(pred: InstructionPredictions, truth=None, window: int = 1000, rounding: str = "cumulative",
           mode: str = "threshold", threshold: float = 0.5) -> SimReport:
    """Summarise predictions; ``truth`` is an optional detailed trace of the same run."""
    pm = metrics_from_predictions(pred, rounding, mode, threshold)
    prow = phase_rows(pred, window, rounding, mode, threshold)
    rows = [{"window": r["window"], "cpi_pred": r["cpi"], "l1d_mpki_pred": r["l1d_mpki"],
             "br_mpki_pred": r["br_mpki"]} for r in prow]
    tm = err = None
    if truth is not None:
        tm = stats(truth)
        if tm.instruction_count != len(pred):
            raise ValidationError(f"truth has {tm.instruction_count} instructions, predictions {len(pred)}")
        err = cpi_error(pm.cpi, tm.cpi)
        trow = phase_rows(InstructionPredictions.from_labels(align(truth)), window, "none", "threshold")
        for r, t in zip(rows, trow):
            r.update(cpi_truth=t["cpi"], l1d_mpki_truth=t["l1d_mpki"], br_mpki_truth=t["br_mpki"])
    settings = {"window": window, "rounding": rounding, "count_mode": mode, "threshold": threshold}
    return SimReport(pm, tm, err, rows, settings)


def simulate_parallel(model: TaoModel, trace, parts: int = 1, warmup: int | None = None,
                      truth=None, window: int = 1000, workers: int = 1, schema: FeatureSchema | None = None,
                      rounding: str = "cumulative", mode: str = "threshold", threshold: float = 0.5,
                      feature_warmup: str = "snapshot") -> SimReport:
    """Partitioned prediction followed by :func:`report` on the merged predictions.

    Chunk clocks are chained, so the total equals the recurrence over the
    concatenated per-instruction predictions.
    """
    pred = partitioned_predictions(model, trace, parts, warmup, schema, workers, feature_warmup=feature_warmup)
    rep = report(pred, truth, window, rounding, mode, threshold)
    rep.settings.update(parts=parts, warmup=default_warmup(model.schema, model.cfg.context) if warmup is None
                        else warmup, feature_warmup=feature_warmup)
    rep.predictions = pred
    return rep


def workers_from_env(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    return max(1, int(os.environ.get("TAO_WORKERS", "1")))
