"""Experiment configuration: one JSON document, one dataclass per section."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ValidationError
from .features import FeatureSchema
from .nn.model import HEADS, ModelConfig
from .nn.train import TrainConfig
from .refsim.config import UARCH_A, UARCH_B, UARCH_C, MicroArchConfig
from .refsim.programs import Profile

PRESETS = {"A": UARCH_A, "B": UARCH_B, "C": UARCH_C}


def _strict(cls, d, where: str):
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    extra = sorted(set(d) - names)
    if extra:
        raise ValidationError(f"{where}: unknown key(s) {extra}")
    return cls(**d)


@dataclass(frozen=True)
class ProgramSpec:
    seed: int
    profile: str
    length: int = 200

    def __post_init__(self):
        try:
            Profile(self.profile)
        except ValueError:
            raise ValidationError(f"unknown profile {self.profile!r}") from None
        if self.length < 8:
            raise ValidationError("program length must be >= 8")

    @property
    def name(self) -> str:
        return f"{self.profile}-{self.seed}-{self.length}"


@dataclass(frozen=True)
class ProgramsSection:
    train: tuple = ()
    test: tuple = ()
    budget: int = 15_000

    @classmethod
    def from_json(cls, d: dict, where: str = "programs") -> "ProgramsSection":
        s = _strict(cls, d, where)
        tr = tuple(_strict(ProgramSpec, p, f"{where}.train[{k}]") for k, p in enumerate(s.train))
        te = tuple(_strict(ProgramSpec, p, f"{where}.test[{k}]") for k, p in enumerate(s.test))
        if s.budget < 1:
            raise ValidationError(f"{where}.budget must be >= 1")
        return cls(tr, te, s.budget)


@dataclass(frozen=True)
class SchemaSection:
    n_b: int = 1024
    n_q: int = 32
    n_m: int = 64
    N: int = 128

    def schema(self) -> FeatureSchema:
        return FeatureSchema(n_b=self.n_b, n_q=self.n_q, n_m=self.n_m)


@dataclass(frozen=True)
class ModelSection:
    D: int = 64
    H: int = 4
    d_op: int = 16
    d_cat: int = 16
    hidden: int = 64
    heads: tuple = HEADS
    loss_weights: dict = field(default_factory=lambda: {h: 1.0 for h in HEADS})

    def model_config(self, context: int) -> ModelConfig:
        return ModelConfig(context=context, embed_dim=self.D, heads=self.H, d_op=self.d_op,
                           d_cat=self.d_cat, hidden=self.hidden, enabled_heads=tuple(self.heads),
                           loss_weights=dict(self.loss_weights))


@dataclass(frozen=True)
class SimulateSection:
    P: int = 1
    W: int | None = None
    K: int = 1000
    count_mode: str = "threshold"
    threshold: float = 0.5
    rounding: str = "cumulative"


@dataclass(frozen=True)
class SelectSection:
    n: int = 16
    seed: int = 0
    budget: int = 5_000


@dataclass(frozen=True)
class FinetuneSection:
    epochs: int = 3
    budget: int | None = None
    lr: float = 2e-3


@dataclass(frozen=True)
class ExperimentConfig:
    uarch: MicroArchConfig = UARCH_A
    programs: ProgramsSection = ProgramsSection()
    schema: SchemaSection = SchemaSection()
    model: ModelSection = ModelSection()
    train: TrainConfig = TrainConfig()
    simulate: SimulateSection = SimulateSection()
    select: SelectSection = SelectSection()
    finetune: FinetuneSection = FinetuneSection()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError("config: top level must be an object")
        known = {f.name for f in fields(cls)} - {"raw"}
        extra = sorted(set(d) - known)
        if extra:
            raise ValidationError(f"config: unknown key(s) {extra}")
        u = d.get("uarch", "A")
        if isinstance(u, str):
            if u not in PRESETS:
                raise ValidationError(f"uarch: unknown preset {u!r} (choose from {sorted(PRESETS)})")
            uarch = PRESETS[u]
        else:
            try:
                uarch = MicroArchConfig.from_json(u)
            except ValidationError as e:
                raise ValidationError(f"uarch: {e}") from None
        model = _strict(ModelSection, d.get("model", {}), "model")
        bad = sorted(set(model.loss_weights) - set(HEADS)) + sorted(set(model.heads) - set(HEADS))
        if bad:
            raise ValidationError(f"model: unknown head name(s) {bad}")
        model = ModelSection(**{**asdict(model), "heads": tuple(model.heads),
                                "loss_weights": {**{h: 1.0 for h in HEADS}, **model.loss_weights}})
        sim = _strict(SimulateSection, d.get("simulate", {}), "simulate")
        if sim.count_mode not in ("threshold", "expected"):
            raise ValidationError(f"simulate.count_mode: unknown mode {sim.count_mode!r}")
        if sim.K < 1 or sim.P < 1:
            raise ValidationError("simulate: K and P must be >= 1")
        try:
            train = TrainConfig.from_json(d.get("train", {}))
        except ValidationError as e:
            raise ValidationError(f"train: {e}") from None
        return cls(
            uarch=uarch,
            programs=ProgramsSection.from_json(d.get("programs", {})),
            schema=_strict(SchemaSection, d.get("schema", {}), "schema"),
            model=model,
            train=train,
            simulate=sim,
            select=_strict(SelectSection, d.get("select", {}), "select"),
            finetune=_strict(FinetuneSection, d.get("finetune", {}), "finetune"),
            raw=json.loads(json.dumps(d)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
        return cls.from_json(d)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def feature_schema(self) -> FeatureSchema:
        return self.schema.schema()

    def model_config(self) -> ModelConfig:
        return self.model.model_config(self.schema.N)
