"""Desk-scale experiments: held-out accuracy, transfer speedup, design sweeps.

Each experiment is a plain function over a frozen dataclass config and
returns a JSON-friendly dict, so the scripts and the acceptance tests share
one code path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .features import FeatureSchema
from .nn.model import HEADS, ModelConfig, TaoModel
from .nn.train import TrainConfig, init_head_biases, train
from .pipeline import baseline_predictions, build_for, label_mean_baseline, trace_pairs
from .refsim.config import UARCH_A, UARCH_C, MicroArchConfig
from .refsim.core import stats
from .refsim.programs import generate_program
from .select import measure, sample_designs, select_pair
from .sim import cpi_error, metrics_from_predictions, predict_trace
from .xfer import FinetuneJob, SharedTrainer, finetune

# exec labels carry 60+ cycle memory latencies; unit weights let that MSE swamp the classifiers
BALANCED_WEIGHTS = {**{h: 1.0 for h in HEADS}, "fetch_cycles": 0.25, "exec_cycles": 0.001}


@dataclass(frozen=True)
class Workload:
    train: tuple = ((11, "compute"), (12, "memory"), (13, "branchy"), (14, "mixed"))
    test: tuple = ((21, "mixed"), (22, "memory"))
    length: int = 200
    budget: int = 16_000

    def programs(self, which: str) -> list:
        return [generate_program(s, p, self.length) for s, p in getattr(self, which)]


def _model_cfg() -> ModelConfig:
    return ModelConfig(context=64, loss_weights=dict(BALANCED_WEIGHTS))


@dataclass(frozen=True)
class DeskScaleConfig:
    workload: Workload = Workload()
    uarch: MicroArchConfig = UARCH_A
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    model: ModelConfig = field(default_factory=_model_cfg)
    train: TrainConfig = TrainConfig(epochs=12, batch_size=64, lr=2e-3, lr_decay=0.85)
    seed: int = 0


def _relerr(pred: float, truth: float) -> float:
    return abs(pred - truth) / truth * 100.0 if truth else (0.0 if pred == truth else float("inf"))


def train_on(cfg: DeskScaleConfig, uarch: MicroArchConfig | None = None, log=None) -> tuple[TaoModel, Dataset, list]:
    ds = build_for(cfg.workload.programs("train"), uarch or cfg.uarch, cfg.workload.budget, cfg.schema,
                   cfg.model.context)
    model = TaoModel(cfg.model, cfg.schema, seed=cfg.seed)
    init_head_biases(model, ds)
    hist = train(model, ds, cfg.train, log=log)
    return model, ds, hist


def heldout(model: TaoModel, cfg: DeskScaleConfig, uarch: MicroArchConfig | None = None,
            baseline: tuple[float, float] | None = None) -> dict:
    """Per-program and averaged CPI / MPKI, predicted against the detailed oracle."""
    uarch = uarch or cfg.uarch
    rows = []
    for prog, (f, d) in zip(cfg.workload.programs("test"), trace_pairs(cfg.workload.programs("test"), uarch,
                                                                         cfg.workload.budget)):
        truth = stats(d)
        pred = predict_trace(model, f)
        thr = metrics_from_predictions(pred, mode="threshold")
        exp = metrics_from_predictions(pred, mode="expected")
        row = {"program": prog.name, "cpi_truth": truth.cpi, "cpi_pred": thr.cpi,
               "cpi_error_pct": cpi_error(thr.cpi, truth.cpi),
               "l1d_mpki_truth": truth.l1d_mpki, "l1d_mpki_threshold": thr.l1d_mpki, "l1d_mpki_expected": exp.l1d_mpki,
               "br_mpki_truth": truth.branch_mpki, "br_mpki_threshold": thr.branch_mpki,
               "br_mpki_expected": exp.branch_mpki}
        if baseline is not None:
            b = metrics_from_predictions(baseline_predictions(f, *baseline))
            row["cpi_baseline"] = b.cpi
            row["baseline_error_pct"] = cpi_error(b.cpi, truth.cpi)
        rows.append(row)
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "program"}
    for mode in ("threshold", "expected"):
        mean[f"l1d_mpki_{mode}_error_pct"] = _relerr(mean[f"l1d_mpki_{mode}"], mean["l1d_mpki_truth"])
        mean[f"br_mpki_{mode}_error_pct"] = _relerr(mean[f"br_mpki_{mode}"], mean["br_mpki_truth"])
    return {"programs": rows, "mean": mean}


def desk_scale(cfg: DeskScaleConfig = DeskScaleConfig(), log=None) -> dict:
    """Train on the training programs, score the held-out ones against the oracle and a constant baseline."""
    t0 = time.perf_counter()
    model, ds, hist = train_on(cfg, log=log)
    res = heldout(model, cfg, baseline=label_mean_baseline(ds))
    res.update(samples=len(ds), history=hist, seconds=time.perf_counter() - t0)
    res["model"] = model
    return res


# transfer


@dataclass(frozen=True)
class TransferConfig:
    workload: Workload = Workload(budget=9_000)
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    model: ModelConfig = field(default_factory=_model_cfg)
    n_designs: int = 16
    select_seed: int = 0
    select_budget: int = 4_000
    target: MicroArchConfig = UARCH_C
    shared_epochs: int = 6
    scratch_epochs: int = 10
    finetune_fraction: float = 0.2
    train: TrainConfig = TrainConfig(batch_size=64, lr=2e-3, lr_decay=0.8)
    seed: int = 0


def transfer(cfg: TransferConfig = TransferConfig(), log=None) -> dict:
    """Shared embeddings on the selected pair, then scratch vs. fine-tune on ``cfg.target``.

    Both runs are scored by the same yardstick: the combined loss over the full
    target dataset after every epoch.
    """
    say = log or (lambda *_: None)
    t0 = time.perf_counter()
    wl = cfg.workload
    programs = wl.programs("train")
    samples = measure(sample_designs(cfg.n_designs, cfg.select_seed), programs, cfg.select_budget)
    sel = select_pair(samples)
    pair = sel.configs()
    say({"selected": list(sel.pair), "distance": float(sel.distances[sel.pair])})

    N = cfg.model.context
    pair_ds = [build_for(programs, u, wl.budget, cfg.schema, N) for u in pair]
    trainer = SharedTrainer(cfg.model, cfg.schema, ["sel0", "sel1"], pair_ds, "normalized_average",
                            cfg.train, seed=cfg.seed)
    shared_hist = trainer.fit(cfg.shared_epochs, log=say)

    target_ds = build_for(programs, cfg.target, wl.budget, cfg.schema, N)
    scratch = TaoModel(cfg.model, cfg.schema, seed=cfg.seed + 1)
    init_head_biases(scratch, target_ds)
    scratch_hist = train(scratch, target_ds, replace(cfg.train, epochs=cfg.scratch_epochs), eval_ds=target_ds,
                         log=say)
    converged = scratch_hist[-1]["eval_loss"]

    budget = int(cfg.finetune_fraction * len(target_ds))
    base = trainer.model(0)
    ft_epochs = cfg.scratch_epochs // 2
    _, ft_hist = finetune(FinetuneJob(base, target_ds, "target", replace(cfg.train, epochs=ft_epochs)),
                          budget=budget, eval_ds=target_ds, log=say)
    reached = next((r["epoch"] for r in ft_hist if r["eval_loss"] <= converged), None)
    return {
        "pair": list(sel.pair), "pair_configs": [u.to_json() for u in pair],
        "scratch_samples": len(target_ds), "finetune_samples": budget,
        "scratch_epochs": cfg.scratch_epochs, "converged_loss": converged,
        "finetune_epochs_run": ft_epochs, "finetune_epochs_to_converged": reached,
        "scratch_history": scratch_hist, "finetune_history": ft_hist, "shared_history": shared_hist,
        "seconds": time.perf_counter() - t0,
    }


# design-space sweeps


@dataclass(frozen=True)
class SweepConfig:
    workload: Workload = Workload(budget=8_000)
    finetune: TrainConfig = TrainConfig(epochs=3, batch_size=64, lr=2e-3, lr_decay=0.8)
    l1d_sizes: tuple = (1024, 2048, 4096, 8192)
    predictors: tuple = ("TwoBitLocal", "GShare", "Tournament")


def spearman(a, b) -> float:
    """Rank correlation without tie handling (callers check for ties first)."""
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))


def sweep(base: TaoModel, uarch: MicroArchConfig, param: str, values, cfg: SweepConfig, metric: str,
          log=None) -> dict:
    """Fine-tune ``base`` at every point and average ``metric`` over the held-out programs."""
    wl = cfg.workload
    train_progs, test_progs = wl.programs("train"), wl.programs("test")
    rows = []
    for v in values:
        u = uarch.with_param(param, v)
        ds = build_for(train_progs, u, wl.budget, base.schema, base.cfg.context)
        tuned, _ = finetune(FinetuneJob(base, ds, f"{param}={v}", cfg.finetune))
        truth, thr, exp = [], [], []
        for f, d in trace_pairs(test_progs, u, wl.budget):
            pred = predict_trace(tuned, f)
            truth.append(getattr(stats(d), metric))
            thr.append(getattr(metrics_from_predictions(pred, mode="threshold"), metric))
            exp.append(getattr(metrics_from_predictions(pred, mode="expected"), metric))
        row = {"value": v, "truth": float(np.mean(truth)), "threshold": float(np.mean(thr)),
               "expected": float(np.mean(exp))}
        rows.append(row)
        if log:
            log(row)
    out = {"param": param, "metric": metric, "rows": rows}
    for k in ("threshold", "expected"):
        col = [r[k] for r in rows]
        out[f"spearman_{k}"] = spearman(col, [r["truth"] for r in rows]) if len(set(col)) == len(col) else None
    return out
