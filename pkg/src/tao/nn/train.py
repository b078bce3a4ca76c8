"""Single-architecture training loop and dataset-level evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dataset import Dataset
from ..errors import ValidationError
from .batching import BatchSource
from .model import N_DLEVEL, TaoModel, loss
from .optim import make_optimizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-3
    seed: int = 0
    optimizer: str = "adam"
    lr_decay: float = 1.0  # multiplicative per epoch

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValidationError(f"unknown train keys: {sorted(extra)}")
        return cls(**d)


def _logit(p: float) -> float:
    p = min(max(p, 1e-4), 1 - 1e-4)
    return float(np.log(p / (1 - p)))


def init_head_biases(model: TaoModel, ds: Dataset) -> None:
    """Start every head at the label marginal of ``ds``."""
    rows = ds.samples
    a = model.arch
    a["head.fetch_cycles.b"].data[:] = ds.fetch[rows].mean()
    a["head.exec_cycles.b"].data[:] = ds.exec[rows].mean()
    a["head.branch_mispred.b"].data[:] = _logit(ds.mispred[rows].mean())
    a["head.icache_miss.b"].data[:] = _logit(ds.imiss[rows].mean())
    freq = np.bincount(ds.dlevel[rows], minlength=N_DLEVEL) + 1.0
    a["head.data_access_level.b"].data[:] = np.log(freq / freq.sum())


def train(model: TaoModel, ds: Dataset, cfg: TrainConfig, trainable: list[str] | None = None,
          eval_ds: Dataset | None = None, log=None) -> list[dict]:
    """Minimise the combined loss; returns one history row per epoch.

    ``trainable`` restricts the update to the named parameters; the rest keep
    their values bit for bit.
    """
    params = model.parameters()
    names = sorted(params) if trainable is None else list(trainable)
    opt = make_optimizer(cfg.optimizer, {k: params[k] for k in names}, cfg.lr)
    frozen = [k for k in params if k not in set(names)]
    src = BatchSource(ds, cfg.batch_size, model.cfg.context, cfg.seed)
    history = []
    for ep in range(cfg.epochs):
        total, seen = 0.0, 0
        for batch, labels in src.epoch():
            for k in frozen:
                params[k].requires_grad = False
            try:
                out, _ = loss(model.forward(batch), labels, model.cfg)
            finally:
                for k in frozen:
                    params[k].requires_grad = True
            if out._backward is not None:
                out.backward()
            opt.step()
            total += float(out.data) * len(batch)
            seen += len(batch)
        opt.lr *= cfg.lr_decay
        row = {"epoch": ep + 1, "train_loss": total / max(seen, 1)}
        if eval_ds is not None:
            row["eval_loss"] = evaluate(model, eval_ds)["loss"]
        history.append(row)
        if log:
            log(row)
    return history


def evaluate(model: TaoModel, ds: Dataset, batch_size: int = 256) -> dict:
    """Sample-weighted mean of the combined loss and its terms, no updates."""
    frozen = model.frozen()
    src = BatchSource(ds, batch_size, model.cfg.context)
    sums: dict[str, float] = {}
    n = 0
    for batch, labels in src.ordered():
        out, terms = loss(frozen.forward(batch), labels, model.cfg)
        b = len(batch)
        sums["loss"] = sums.get("loss", 0.0) + float(out.data) * b
        for k, v in terms.items():
            sums[k] = sums.get(k, 0.0) + v * b
        n += b
    return {k: v / max(n, 1) for k, v in sums.items()}
