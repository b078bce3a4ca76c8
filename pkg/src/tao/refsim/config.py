"""Microarchitecture parameters and the toy design space."""

from __future__ import annotations

import enum
import itertools
from dataclasses import asdict, dataclass, field, replace

from ..errors import InvalidConfig


class Predictor(str, enum.Enum):
    ALWAYS_TAKEN = "AlwaysTaken"
    TWO_BIT_LOCAL = "TwoBitLocal"
    GSHARE = "GShare"
    TOURNAMENT = "Tournament"


def _pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class CacheConfig:
    size_bytes: int
    associativity: int
    line_bytes: int = 32
    replacement: str = "LRU"

    @property
    def num_sets(self) -> int:
        return self.size_bytes // (self.associativity * self.line_bytes)

    def validate(self, name: str = "cache") -> None:
        if not _pow2(self.size_bytes):
            raise InvalidConfig(f"{name}.size_bytes must be a power of two, got {self.size_bytes}")
        if not _pow2(self.line_bytes):
            raise InvalidConfig(f"{name}.line_bytes must be a power of two, got {self.line_bytes}")
        if self.associativity < 1:
            raise InvalidConfig(f"{name}.associativity must be >= 1")
        if self.size_bytes % (self.associativity * self.line_bytes):
            raise InvalidConfig(f"{name}: size not divisible by associativity * line_bytes")
        if not _pow2(self.num_sets):
            raise InvalidConfig(f"{name}: number of sets ({self.num_sets}) must be a power of two")
        if self.replacement != "LRU":
            raise InvalidConfig(f"{name}.replacement: only LRU is supported")


@dataclass(frozen=True)
class MicroArchConfig:
    fetch_width: int = 2
    rob_size: int = 32
    branch_predictor: Predictor = Predictor.TWO_BIT_LOCAL
    l1d: CacheConfig = field(default_factory=lambda: CacheConfig(2048, 2))
    l1i: CacheConfig = field(default_factory=lambda: CacheConfig(1024, 2))
    l2: CacheConfig = field(default_factory=lambda: CacheConfig(32768, 4))
    mem_latency: int = 60
    l2_latency: int = 12
    l1_latency: int = 2

    def validate(self) -> None:
        if not 1 <= self.fetch_width <= 8:
            raise InvalidConfig(f"fetch_width must be in [1, 8], got {self.fetch_width}")
        if not 4 <= self.rob_size <= 128:
            raise InvalidConfig(f"rob_size must be in [4, 128], got {self.rob_size}")
        if not isinstance(self.branch_predictor, Predictor):
            raise InvalidConfig(f"unknown branch_predictor {self.branch_predictor!r}")
        for name in ("l1d", "l1i", "l2"):
            getattr(self, name).validate(name)
        if not (self.l1d.size_bytes < self.l2.size_bytes and self.l1i.size_bytes < self.l2.size_bytes):
            raise InvalidConfig("L1 sizes must be smaller than the L2 size")
        if not 0 < self.l1_latency < self.l2_latency < self.mem_latency:
            raise InvalidConfig("latencies must satisfy 0 < l1 < l2 < mem")

    def to_json(self) -> dict:
        d = asdict(self)
        d["branch_predictor"] = self.branch_predictor.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MicroArchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown uarch keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "branch_predictor" in kw:
                kw["branch_predictor"] = Predictor(kw["branch_predictor"])
            for name in ("l1d", "l1i", "l2"):
                if name in kw:
                    c = kw[name]
                    extra = set(c) - set(CacheConfig.__dataclass_fields__)
                    if extra:
                        raise InvalidConfig(f"unknown {name} keys: {sorted(extra)}")
                    kw[name] = CacheConfig(**c)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def with_param(self, dotted: str, value) -> "MicroArchConfig":
        """Copy with one (possibly nested, e.g. ``l1d.size``) parameter replaced."""
        aliases = {"size": "size_bytes", "assoc": "associativity", "line": "line_bytes"}
        parts = dotted.split(".")
        if len(parts) == 1:
            if parts[0] not in self.__dataclass_fields__:
                raise InvalidConfig(f"unknown parameter {dotted!r}")
            if parts[0] == "branch_predictor":
                value = Predictor(value)
            cfg = replace(self, **{parts[0]: type(getattr(self, parts[0]))(value)})
        elif len(parts) == 2 and parts[0] in ("l1d", "l1i", "l2"):
            key = aliases.get(parts[1], parts[1])
            cache = getattr(self, parts[0])
            if key not in cache.__dataclass_fields__:
                raise InvalidConfig(f"unknown parameter {dotted!r}")
            cfg = replace(self, **{parts[0]: replace(cache, **{key: int(value)})})
        else:
            raise InvalidConfig(f"unknown parameter {dotted!r}")
        cfg.validate()
        return cfg


# Toy analogue of the published design space: same parameter set, caches
# scaled down so that synthetic kernels exercise every level.
DESIGN_SPACE: dict[str, tuple] = {
    "fetch_width": (2, 3, 4),
    "rob_size": (32, 64, 96, 128),
    "branch_predictor": (Predictor.TWO_BIT_LOCAL, Predictor.GSHARE, Predictor.TOURNAMENT),
    "l1d.associativity": (2, 4, 8),
    "l1d.size_bytes": (1024, 2048, 4096, 8192),
    "l1i.associativity": (2, 4, 8),
    "l1i.size_bytes": (512, 1024, 2048),
    "l2.associativity": (2, 4, 8),
    "l2.size_bytes": (16384, 32768, 65536, 131072),
}


def config_from_point(point: dict) -> MicroArchConfig:
    base = MicroArchConfig()
    caches = {n: {} for n in ("l1d", "l1i", "l2")}
    top = {}
    for key, val in point.items():
        if "." in key:
            cache, attr = key.split(".")
            caches[cache][attr] = val
        else:
            top[key] = val
    for name, attrs in caches.items():
        if attrs:
            top[name] = replace(getattr(base, name), **attrs)
    cfg = replace(base, **top)
    cfg.validate()
    return cfg


def grid_points(space: dict[str, tuple] = DESIGN_SPACE):
    """Cartesian product of the space, in a fixed lexicographic order."""
    keys = list(space)
    for combo in itertools.product(*(space[k] for k in keys)):
        yield dict(zip(keys, combo))


def grid_size(space: dict[str, tuple] = DESIGN_SPACE) -> int:
    n = 1
    for vals in space.values():
        n *= len(vals)
    return n


# Extremes of the toy space, mirroring the three evaluation designs.
UARCH_A = MicroArchConfig(
    fetch_width=2, rob_size=32, branch_predictor=Predictor.TWO_BIT_LOCAL,
    l1d=CacheConfig(1024, 2), l1i=CacheConfig(512, 2), l2=CacheConfig(16384, 2),
)
UARCH_B = MicroArchConfig(
    fetch_width=3, rob_size=96, branch_predictor=Predictor.GSHARE,
    l1d=CacheConfig(2048, 4), l1i=CacheConfig(1024, 4), l2=CacheConfig(65536, 4),
)
UARCH_C = MicroArchConfig(
    fetch_width=4, rob_size=128, branch_predictor=Predictor.TOURNAMENT,
    l1d=CacheConfig(4096, 8), l1i=CacheConfig(2048, 8), l2=CacheConfig(131072, 8),
)
