"""Shared-embedding training across microarchitectures and frozen fine-tuning.

Each architecture branch owns an adaptation matrix ``W`` and its prediction
layers; the embedding layers are shared.  Per step every branch is run on
its own batch.  The gradient reaching a branch's embeddings is ``G @ W.T``,
where ``G`` is the gradient at the adaptation output.  In
``normalized_average`` mode each branch's boundary gradient is mean-centred
and divided by its value range before averaging, so branches whose losses
differ in scale pull on the shared layers equally.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import FrozenViolation, SchemaMismatch, ValidationError
from .features import FeatureSchema
from .nn.autograd import Tensor
from .nn.batching import Batch, BatchSource
from .nn.checkpoint import group_hash
from .nn.model import LabelBatch, ModelConfig, TaoModel, attend, embed, heads, init_arch, init_shared, loss
from .nn.optim import make_optimizer
from .nn.train import TrainConfig, init_head_biases, train

COMBINE_MODES = ("normalized_average", "plain_average", "gradnorm")


def normalize(g: np.ndarray) -> np.ndarray:
    """(X - mean X) / (max X - min X); all zeros for a constant matrix."""
    g = np.asarray(g, np.float64)
    if g.size == 0:
        return g.copy()
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.zeros_like(g)
    return (g - g.mean()) / (hi - lo)


def combine(boundary_grads: list[np.ndarray], mode: str):
    if mode == "normalized_average":
        return [normalize(g) / len(boundary_grads) for g in boundary_grads]
    if mode == "plain_average":
        return [g / len(boundary_grads) for g in boundary_grads]
    if mode == "gradnorm":
        return NotImplemented
    raise ValidationError(f"unknown combine_mode {mode!r}")


@dataclass
class Branch:
    arch_id: str
    params: dict
    dataset: Dataset | None = None
    optimizer: object = None


@dataclass
class StepRecord:
    losses: list
    boundary: list            # autodiff dL/de per branch
    explicit: list            # G @ W.T per branch
    combined: list            # what was pushed into the shared layers
    chain_error: float        # max |autodiff - explicit|


class SharedTrainer:
    """Joint training of one shared embedding group and k >= 2 branches."""

    def __init__(self, cfg: ModelConfig, schema: FeatureSchema, arch_ids: list[str],
                 datasets: list[Dataset] | None = None, combine_mode: str = "normalized_average",
                 train_cfg: TrainConfig = TrainConfig(), seed: int = 0):
        if len(arch_ids) < 2:
            raise ValidationError("shared training needs at least two architecture branches")
        if combine_mode not in COMBINE_MODES:
            raise ValidationError(f"unknown combine_mode {combine_mode!r}")
        datasets = datasets or [None] * len(arch_ids)
        for d in datasets:
            if d is not None and d.schema.hash() != schema.hash():
                raise SchemaMismatch(f"dataset schema {d.schema.hash()} != trainer schema {schema.hash()}")
        self.cfg = cfg
        self.schema = schema
        self.combine_mode = combine_mode
        self.train_cfg = train_cfg
        rng = np.random.default_rng(seed)
        self.shared = init_shared(cfg, schema, rng)
        self.branches = []
        for aid, ds in zip(arch_ids, datasets):
            p = init_arch(cfg, rng)
            b = Branch(aid, p, ds, make_optimizer(train_cfg.optimizer, p, train_cfg.lr))
            self.branches.append(b)
            if ds is not None:
                init_head_biases(self.model(len(self.branches) - 1), ds)
        self.shared_opt = make_optimizer(train_cfg.optimizer, self.shared, train_cfg.lr)
        self.last: StepRecord | None = None

    def model(self, k: int) -> TaoModel:
        """Branch ``k`` as a stand-alone model (parameters shared by reference)."""
        b = self.branches[k]
        return TaoModel(self.cfg, self.schema, shared=self.shared, arch=b.params, arch_id=b.arch_id)

    def step(self, batches: list[tuple[Batch, LabelBatch]]) -> list[float]:
        return shared_step(self, *batches)

    def fit(self, epochs: int, log=None) -> list[dict]:
        """Run ``epochs`` passes over the largest branch dataset (smaller ones cycle)."""
        srcs = [BatchSource(b.dataset, self.train_cfg.batch_size, self.cfg.context, self.train_cfg.seed + k)
                for k, b in enumerate(self.branches)]
        history = []
        for ep in range(epochs):
            longest = max(range(len(srcs)), key=lambda k: len(self.branches[k].dataset))
            iters = [srcs[k].epoch() if k == longest else _cycle(srcs[k]) for k in range(len(srcs))]
            sums = np.zeros(len(srcs))
            steps = 0
            for batches in zip(*iters):
                sums += np.asarray(self.step(list(batches)))
                steps += 1
            for b in self.branches:
                b.optimizer.lr *= self.train_cfg.lr_decay
            self.shared_opt.lr *= self.train_cfg.lr_decay
            row = {"epoch": ep + 1, **{f"loss_{b.arch_id}": float(s / max(steps, 1))
                                        for b, s in zip(self.branches, sums)}}
            history.append(row)
            if log:
                log(row)
        return history


def _cycle(src: BatchSource):
    return itertools.chain.from_iterable(src.epoch() for _ in itertools.count())


def shared_step(trainer: SharedTrainer, *batches) -> list[float]:
    """One shared update: per-branch backward, combined shared update."""
    if len(batches) != len(trainer.branches):
        raise ValidationError(f"expected {len(trainer.branches)} batches, got {len(batches)}")
    cfg, schema = trainer.cfg, trainer.schema
    losses, embs, auto, explicit = [], [], [], []
    for b, (batch, labels) in zip(trainer.branches, batches):
        if batch.dense.shape[1] != schema.dense_dim:
            raise SchemaMismatch(f"batch feature width {batch.dense.shape[1]} != schema {schema.dense_dim}")
        e = embed(trainer.shared, schema, batch.op_ids, batch.dense)
        # cut the graph at the adaptation input so the boundary gradient is observable
        e_leaf = Tensor(e.data, requires_grad=True)
        a = (e_leaf @ b.params["adapt.W"]).retain_grad()
        pred = heads(b.params, attend(b.params, cfg, a, batch.window))
        L, _ = loss(pred, labels, cfg)
        if L._backward is not None:
            L.backward()
        g_e = e_leaf.grad if e_leaf.grad is not None else np.zeros_like(e.data)
        g_a = a.grad if a.grad is not None else np.zeros_like(a.data)
        losses.append(float(L.data))
        embs.append(e)
        auto.append(g_e)
        explicit.append(g_a @ b.params["adapt.W"].data.T)
    comb = combine(auto, trainer.combine_mode)
    if comb is NotImplemented:
        raise NotImplementedError("gradnorm combination is a stub")
    for e, g in zip(embs, comb):
        if e._backward is not None:
            e.backward(grad=g)
    for b in trainer.branches:
        b.optimizer.step()
    trainer.shared_opt.step()
    err = max(float(np.abs(x - y).max()) if x.size else 0.0 for x, y in zip(auto, explicit))
    trainer.last = StepRecord(losses, auto, explicit, comb, err)
    return losses


# fine-tuning

ADAPT_AND_PREDICTION = "uarch"


@dataclass
class FinetuneJob:
    model: TaoModel                 # shared group frozen, branch group initialised
    dataset: Dataset
    arch_id: str
    train_cfg: TrainConfig = field(default_factory=TrainConfig)


def finetune(job: FinetuneJob, epochs: int | None = None, budget: int | None = None,
             eval_ds: Dataset | None = None, log=None) -> tuple[TaoModel, list[dict]]:
    """Train only the adaptation and prediction layers on the new design.

    ``budget`` caps the number of training samples; every trace contributes
    its leading samples in proportion (see :meth:`Dataset.prefix`).  Raises
    :class:`FrozenViolation` if any shared parameter moved.
    """
    m = job.model
    if job.dataset.schema.hash() != m.schema.hash():
        raise SchemaMismatch(f"dataset schema {job.dataset.schema.hash()} != checkpoint {m.schema.hash()}")
    ds = job.dataset if budget is None else job.dataset.prefix(budget)
    before = group_hash(m.shared)
    tc = job.train_cfg if epochs is None else TrainConfig(**{**job.train_cfg.to_json(), "epochs": epochs})
    tuned = TaoModel(m.cfg, m.schema, shared=m.shared,
                     arch={k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in m.arch.items()},
                     arch_id=job.arch_id)
    hist = train(tuned, ds, tc, trainable=sorted(tuned.arch), eval_ds=eval_ds, log=log)
    if group_hash(tuned.shared) != before:
        raise FrozenViolation("shared parameters changed during fine-tuning")
    return tuned, hist
