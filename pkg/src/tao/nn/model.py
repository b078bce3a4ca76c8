"""Attention-based multi-metric latency model.

Shared group (microarchitecture agnostic): opcode lookup table, one linear
embedder per feature category (registers, branch history, access distance,
flags) and a linear combination layer producing one ``D``-vector per
instruction.

Microarchitecture group: adaptation matrix, multi-head self-attention over
the current instruction and its ``N`` predecessors (query from the current
instruction only), output projection, a ReLU layer and one output layer per
predicted metric.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DimensionMismatch, ValidationError
from ..features import FeatureSchema
from .autograd import Tensor, concat, einsum, parameter

HEADS = ("fetch_cycles", "exec_cycles", "branch_mispred", "data_access_level", "icache_miss")
N_DLEVEL = 4


@dataclass(frozen=True)
class ModelConfig:
    context: int = 128
    embed_dim: int = 64
    heads: int = 4
    d_op: int = 16
    d_cat: int = 16
    hidden: int = 64
    enabled_heads: tuple = HEADS
    loss_weights: dict = field(default_factory=lambda: {h: 1.0 for h in HEADS})

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValidationError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.context < 0:
            raise ValidationError("context must be >= 0")
        bad = set(self.enabled_heads) - set(HEADS)
        if bad:
            raise ValidationError(f"unknown heads {sorted(bad)}")
        bad = set(self.loss_weights) - set(HEADS)
        if bad:
            raise ValidationError(f"unknown loss weight keys {sorted(bad)}")

    def weight(self, head: str) -> float:
        return float(self.loss_weights.get(head, 1.0))

    def to_json(self) -> dict:
        d = asdict(self)
        d["enabled_heads"] = list(self.enabled_heads)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValidationError(f"unknown model keys: {sorted(extra)}")
        d = dict(d)
        if "enabled_heads" in d:
            d["enabled_heads"] = tuple(d["enabled_heads"])
        return cls(**d)


def _init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(max(fan_in, 1)), size=shape)


def init_shared(cfg: ModelConfig, schema: FeatureSchema, rng: np.random.Generator) -> dict:
    D, dc = cfg.embed_dim, cfg.d_cat
    p = {
        "embed.op_table": _init(rng, 1, (schema.vocab_size, cfg.d_op)) * 0.5,
        "embed.regs.W": _init(rng, schema.register_count, (schema.register_count, dc)),
        "embed.regs.b": np.zeros(dc),
        "embed.branch.W": _init(rng, schema.n_q, (schema.n_q, dc)),
        "embed.branch.b": np.zeros(dc),
        "embed.dist.W": _init(rng, schema.n_m, (schema.n_m, dc)) * 4.0,
        "embed.dist.b": np.zeros(dc),
        "embed.flags.W": _init(rng, 3, (3, dc)),
        "embed.flags.b": np.zeros(dc),
    }
    width = cfg.d_op + 4 * dc
    p["embed.comb.W"] = _init(rng, width, (width, D))
    p["embed.comb.b"] = np.zeros(D)
    return {k: parameter(v, k) for k, v in p.items()}


def init_arch(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    D, Hd = cfg.embed_dim, cfg.hidden
    p = {
        "adapt.W": np.eye(D),
        "attn.Wq": _init(rng, D, (D, D)),
        "attn.Wk": _init(rng, D, (D, D)),
        "attn.Wv": _init(rng, D, (D, D)),
        "attn.Wo": _init(rng, D, (D, D)),
        "attn.bo": np.zeros(D),
        "final.W": _init(rng, D, (D, Hd)),
        "final.b": np.zeros(Hd),
        "head.fetch_cycles.W": _init(rng, Hd, (Hd, 1)) * 0.1,
        "head.fetch_cycles.b": np.zeros(1),
        "head.exec_cycles.W": _init(rng, Hd, (Hd, 1)) * 0.1,
        "head.exec_cycles.b": np.zeros(1),
        "head.branch_mispred.W": _init(rng, Hd, (Hd, 1)) * 0.1,
        "head.branch_mispred.b": np.zeros(1),
        "head.data_access_level.W": _init(rng, Hd, (Hd, N_DLEVEL)) * 0.1,
        "head.data_access_level.b": np.zeros(N_DLEVEL),
        "head.icache_miss.W": _init(rng, Hd, (Hd, 1)) * 0.1,
        "head.icache_miss.b": np.zeros(1),
    }
    return {k: parameter(v, k) for k, v in p.items()}


def embed(shared: dict, schema: FeatureSchema, op_ids: np.ndarray, dense: np.ndarray) -> Tensor:
    """Per-instruction embeddings, shape (rows, D)."""
    R, q, m = schema.register_count, schema.n_q, schema.n_m
    if dense.ndim != 2 or dense.shape[1] != schema.dense_dim or len(op_ids) != len(dense):
        raise DimensionMismatch(f"dense features of shape {dense.shape} do not match schema "
                                f"(expected (*, {schema.dense_dim}))")
    parts = [
        shared["embed.op_table"].take(op_ids),
        Tensor(dense[:, :R]) @ shared["embed.regs.W"] + shared["embed.regs.b"],
        Tensor(dense[:, R:R + q]) @ shared["embed.branch.W"] + shared["embed.branch.b"],
        Tensor(dense[:, R + q:R + q + m]) @ shared["embed.dist.W"] + shared["embed.dist.b"],
        Tensor(dense[:, R + q + m:]) @ shared["embed.flags.W"] + shared["embed.flags.b"],
    ]
    return concat(parts, axis=1) @ shared["embed.comb.W"] + shared["embed.comb.b"]


def adapt(arch: dict, e: Tensor) -> Tensor:
    return e @ arch["adapt.W"]


def attend(arch: dict, cfg: ModelConfig, a: Tensor, window: np.ndarray, return_weights: bool = False):
    """Self-attention read-out at the last window position.

    ``a`` holds one row per distinct instruction.  ``window`` (B, N+1)
    indexes rows of ``a``; the value ``len(a)`` stands for a zero (padding)
    embedding.
    """
    B, W = window.shape
    D, H = cfg.embed_dim, cfg.heads
    if a.shape[1] != D:
        raise DimensionMismatch(f"embedding width {a.shape[1]} != {D}")
    if W != cfg.context + 1:
        raise DimensionMismatch(f"window length {W} != context + 1 = {cfg.context + 1}")
    dh = D // H
    a_pad = concat([a, Tensor(np.zeros((1, D)))], axis=0)
    K = a_pad @ arch["attn.Wk"]
    V = a_pad @ arch["attn.Wv"]
    cur = a_pad.take(window[:, -1])
    q = (cur @ arch["attn.Wq"]).reshape(B, H, dh)
    Kw = K.take(window).reshape(B, W, H, dh)
    Vw = V.take(window).reshape(B, W, H, dh)
    scores = einsum("bhd,bnhd->bhn", q, Kw) * (1.0 / math.sqrt(dh))
    att = scores.softmax(axis=-1)
    o = einsum("bhn,bnhd->bhd", att, Vw).reshape(B, D)
    out = o @ arch["attn.Wo"] + arch["attn.bo"] + cur
    return (out, att) if return_weights else out


@dataclass
class Predictions:
    fetch: Tensor          # (B,)
    exec: Tensor           # (B,)
    br_logit: Tensor       # (B,)
    dl_logits: Tensor      # (B, 4)
    ic_logit: Tensor       # (B,)

    def __len__(self) -> int:
        return self.fetch.shape[0]

    @property
    def br_prob(self) -> np.ndarray:
        return self.br_logit.sigmoid().data

    @property
    def ic_prob(self) -> np.ndarray:
        return self.ic_logit.sigmoid().data

    @property
    def dl_prob(self) -> np.ndarray:
        return self.dl_logits.softmax(axis=-1).data


def heads(arch: dict, h: Tensor) -> Predictions:
    z = (h @ arch["final.W"] + arch["final.b"]).relu()

    def lin(name):
        return z @ arch[f"head.{name}.W"] + arch[f"head.{name}.b"]
    B = h.shape[0]
    return Predictions(
        lin("fetch_cycles").reshape(B),
        lin("exec_cycles").reshape(B),
        lin("branch_mispred").reshape(B),
        lin("data_access_level"),
        lin("icache_miss").reshape(B),
    )


@dataclass
class LabelBatch:
    fetch: np.ndarray
    exec: np.ndarray
    mispred: np.ndarray
    dlevel: np.ndarray
    imiss: np.ndarray


def loss(pred: Predictions, labels: LabelBatch, cfg: ModelConfig) -> tuple[Tensor, dict]:
    """Weighted sum of per-head losses (MSE, MSE, BCE, CE, BCE)."""
    B = len(pred)
    terms = {}
    if "fetch_cycles" in cfg.enabled_heads:
        terms["fetch_cycles"] = (pred.fetch - labels.fetch.astype(float)).square().mean()
    if "exec_cycles" in cfg.enabled_heads:
        terms["exec_cycles"] = (pred.exec - labels.exec.astype(float)).square().mean()
    if "branch_mispred" in cfg.enabled_heads:
        y = labels.mispred.astype(float)
        terms["branch_mispred"] = (pred.br_logit.softplus() - pred.br_logit * y).mean()
    if "data_access_level" in cfg.enabled_heads:
        onehot = np.zeros((B, N_DLEVEL))
        onehot[np.arange(B), labels.dlevel.astype(int)] = 1.0
        terms["data_access_level"] = -(pred.dl_logits.log_softmax(axis=-1) * onehot).sum() * (1.0 / B)
    if "icache_miss" in cfg.enabled_heads:
        y = labels.imiss.astype(float)
        terms["icache_miss"] = (pred.ic_logit.softplus() - pred.ic_logit * y).mean()
    total = None
    for name, t in terms.items():
        w = t * cfg.weight(name)
        total = w if total is None else total + w
    if total is None:
        total = Tensor(0.0)
    return total, {k: float(v.data) for k, v in terms.items()}


class TaoModel:
    """Shared embedding plus one microarchitecture branch."""

    def __init__(self, cfg: ModelConfig, schema: FeatureSchema, seed: int = 0,
                 shared: dict | None = None, arch: dict | None = None, arch_id: str = ""):
        self.cfg = cfg
        self.schema = schema
        rng = np.random.default_rng(seed)
        self.shared = shared if shared is not None else init_shared(cfg, schema, rng)
        self.arch = arch if arch is not None else init_arch(cfg, rng)
        self.arch_id = arch_id

    def parameters(self) -> dict:
        return {**self.shared, **self.arch}

    def group_of(self, name: str) -> str:
        if name in self.shared:
            return "shared"
        if name in self.arch:
            return "uarch"
        raise KeyError(name)

    def forward(self, batch) -> Predictions:
        e = embed(self.shared, self.schema, batch.op_ids, batch.dense)
        a = adapt(self.arch, e)
        return heads(self.arch, attend(self.arch, self.cfg, a, batch.window))

    def frozen(self) -> "TaoModel":
        """Copy whose parameters do not record gradients (for inference)."""
        f = lambda d: {k: Tensor(v.data) for k, v in d.items()}
        return TaoModel(self.cfg, self.schema, shared=f(self.shared), arch=f(self.arch), arch_id=self.arch_id)
