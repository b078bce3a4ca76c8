"""Microarchitecture-agnostic instruction features.

Per instruction: opcode id, register bitmap (sources and destination),
branch history read from a PC-hashed table of outcome FIFOs, and the signed
distances from the current memory address to the previous ``n_m`` addresses.
Branch history is read before the branch's own outcome is pushed.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import UnalignedPC, UnknownOpcode, ValidationError
from .refsim.isa import NUM_REGS, Opcode

INT32_MIN, INT32_MAX = -(1 << 31), (1 << 31) - 1
COND_BRANCH_OPS = (Opcode.BRANCH_EQ.value, Opcode.BRANCH_NE.value)
DEFAULT_VOCAB = {op.value: i for i, op in enumerate(Opcode)}


@dataclass(frozen=True)
class FeatureSchema:
    opcode_vocab: dict = field(default_factory=lambda: dict(DEFAULT_VOCAB))
    register_count: int = NUM_REGS
    n_b: int = 1024
    n_q: int = 32
    n_m: int = 64
    missing_sentinel: int = -1

    def __post_init__(self):
        if min(self.n_b, self.n_q, self.n_m) < 1:
            raise ValidationError("n_b, n_q and n_m must be >= 1")
        if sorted(self.opcode_vocab.values()) != list(range(len(self.opcode_vocab))):
            raise ValidationError("opcode ids must be dense in [0, |vocab|)")

    @property
    def vocab_size(self) -> int:
        return len(self.opcode_vocab)

    @property
    def dense_dim(self) -> int:
        """Width of the real-valued part of an encoded feature vector."""
        return self.register_count + self.n_q + self.n_m + 3

    def to_json(self) -> dict:
        return {
            "opcode_vocab": dict(sorted(self.opcode_vocab.items(), key=lambda kv: kv[1])),
            "register_count": self.register_count,
            "n_b": self.n_b,
            "n_q": self.n_q,
            "n_m": self.n_m,
            "missing_sentinel": self.missing_sentinel,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FeatureSchema":
        allowed = {"opcode_vocab", "register_count", "n_b", "n_q", "n_m", "missing_sentinel"}
        extra = set(d) - allowed
        if extra:
            raise ValidationError(f"unknown schema keys: {sorted(extra)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class FeatureState:
    """Branch-history table and memory context queue replayed over a trace."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.branch_table: dict[int, deque] = {}
        self.mem_queue: deque = deque(maxlen=schema.n_m)  # most recent first

    def copy(self) -> "FeatureState":
        other = FeatureState(self.schema)
        other.branch_table = {k: deque(v, maxlen=self.schema.n_q) for k, v in self.branch_table.items()}
        other.mem_queue = deque(self.mem_queue, maxlen=self.schema.n_m)
        return other


def branch_bucket(pc: int, n_b: int) -> int:
    if pc % 4:
        raise UnalignedPC(f"pc {pc:#x} is not 4-byte aligned")
    return (pc // 4) % n_b


def branch_features(state: FeatureState, pc: int) -> list[int]:
    """Bucket contents oldest-to-newest, right-padded with the sentinel."""
    s = state.schema
    q = state.branch_table.get(branch_bucket(pc, s.n_b), ())
    out = list(q)
    return out + [s.missing_sentinel] * (s.n_q - len(out))


def update_branch(state: FeatureState, pc: int, taken: bool) -> None:
    b = branch_bucket(pc, state.schema.n_b)
    q = state.branch_table.get(b)
    if q is None:
        q = state.branch_table[b] = deque(maxlen=state.schema.n_q)
    q.append(1 if taken else 0)


def _clamp32(x: int) -> int:
    return INT32_MAX if x > INT32_MAX else INT32_MIN if x < INT32_MIN else x


def access_distance(state: FeatureState, addr: int) -> list[int]:
    out = [_clamp32(addr - prev) for prev in state.mem_queue]
    return out + [0] * (state.schema.n_m - len(out))


def update_memory(state: FeatureState, addr: int) -> None:
    state.mem_queue.appendleft(addr)


@dataclass
class FeatureVector:
    opcode_id: int
    register_bitmap: np.ndarray
    branch_history: np.ndarray
    access_distance: np.ndarray
    is_load: bool
    is_store: bool
    is_branch: bool

    def __eq__(self, other):
        return (
            isinstance(other, FeatureVector)
            and self.opcode_id == other.opcode_id
            and np.array_equal(self.register_bitmap, other.register_bitmap)
            and np.array_equal(self.branch_history, other.branch_history)
            and np.array_equal(self.access_distance, other.access_distance)
            and (self.is_load, self.is_store, self.is_branch) == (other.is_load, other.is_store, other.is_branch)
        )


@dataclass
class FeatureTable:
    """Column-oriented features for a sequence of instructions.

    Indexing yields :class:`FeatureVector`; the columns feed the model.
    """

    schema: FeatureSchema
    opcode: np.ndarray     # (T,) int64
    regs: np.ndarray       # (T, R) uint8
    branch: np.ndarray     # (T, n_q) int8
    dist: np.ndarray       # (T, n_m) int64
    flags: np.ndarray      # (T, 3) uint8: is_load, is_store, is_branch

    def __len__(self) -> int:
        return len(self.opcode)

    def __getitem__(self, i: int) -> FeatureVector:
        f = self.flags[i]
        return FeatureVector(int(self.opcode[i]), self.regs[i], self.branch[i], self.dist[i],
                             bool(f[0]), bool(f[1]), bool(f[2]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls, schema: FeatureSchema, n: int = 0) -> "FeatureTable":
        return cls(
            schema,
            np.zeros(n, np.int64),
            np.zeros((n, schema.register_count), np.uint8),
            np.full((n, schema.n_q), schema.missing_sentinel, np.int8),
            np.zeros((n, schema.n_m), np.int64),
            np.zeros((n, 3), np.uint8),
        )

    @classmethod
    def concat(cls, tables: list["FeatureTable"]) -> "FeatureTable":
        s = tables[0].schema
        return cls(s, *(np.concatenate([getattr(t, c) for t in tables]) for c in
                        ("opcode", "regs", "branch", "dist", "flags")))

    def slice(self, lo: int, hi: int) -> "FeatureTable":
        return FeatureTable(self.schema, self.opcode[lo:hi], self.regs[lo:hi], self.branch[lo:hi],
                            self.dist[lo:hi], self.flags[lo:hi])

    def take(self, idx: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.schema, self.opcode[idx], self.regs[idx], self.branch[idx],
                            self.dist[idx], self.flags[idx])

    def row_bytes(self, i: int) -> bytes:
        return (self.opcode[i:i + 1].tobytes() + self.regs[i].tobytes() + self.branch[i].tobytes()
                + self.dist[i].tobytes() + self.flags[i].tobytes())

    def dense(self) -> np.ndarray:
        """Real-valued model input: [regs | branch | scaled dist | flags]."""
        d = self.dist.astype(np.float64)
        scaled = np.sign(d) * np.log2(1.0 + np.abs(d)) / 32.0
        return np.concatenate(
            [self.regs.astype(np.float64), self.branch.astype(np.float64), scaled,
             self.flags.astype(np.float64)], axis=1)


def featurize_trace(trace, schema: FeatureSchema, state: FeatureState | None = None,
                    return_state: bool = False):
    """Replay a functional trace into a :class:`FeatureTable`.

    ``state`` (copied, not mutated) seeds the replay, which lets a partition
    of a longer trace continue from a snapshot.
    """
    n = len(trace)
    tab = FeatureTable.empty(schema, n)
    st = FeatureState(schema) if state is None else state.copy()
    vocab = schema.opcode_vocab
    n_b, n_q, n_m = schema.n_b, schema.n_q, schema.n_m
    R = schema.register_count
    table = st.branch_table
    mem_idx = []
    mem_addr = []
    for i, r in enumerate(trace):
        oid = vocab.get(r.op)
        if oid is None:
            raise UnknownOpcode(f"opcode {r.op!r} at position {i} is not in the vocabulary")
        tab.opcode[i] = oid
        row = tab.regs[i]
        for reg in r.srcs:
            if 0 <= reg < R:
                row[reg] = 1
        if r.dst is not None and 0 <= r.dst < R:
            row[r.dst] = 1
        if r.op in COND_BRANCH_OPS:
            tab.flags[i, 2] = 1
            if r.pc % 4:
                raise UnalignedPC(f"pc {r.pc:#x} is not 4-byte aligned")
            b = (r.pc // 4) % n_b
            q = table.get(b)
            if q is None:
                q = table[b] = deque(maxlen=n_q)
            if q:
                tab.branch[i, :len(q)] = list(q)
            q.append(1 if r.taken else 0)
        if r.mem_addr is not None:
            if r.op == Opcode.STORE.value:
                tab.flags[i, 1] = 1
            else:
                tab.flags[i, 0] = 1
            mem_idx.append(i)
            mem_addr.append(r.mem_addr)
    if mem_idx:
        tab.dist[mem_idx] = _distances(np.asarray(mem_addr, np.int64), st.mem_queue, n_m)
        for a in mem_addr:
            st.mem_queue.appendleft(a)
    return (tab, st) if return_state else tab


def _distances(addrs: np.ndarray, prior, n_m: int) -> np.ndarray:
    """Row j: addrs[j] minus each of the n_m addresses preceding it, newest first."""
    hist = np.asarray(list(prior)[::-1], np.int64)  # oldest first
    full = np.concatenate([hist, addrs])
    h = len(hist)
    m = len(addrs)
    out = np.zeros((m, n_m), np.int64)
    for k in range(1, n_m + 1):
        # previous address k steps back
        src = np.arange(h, h + m) - k
        ok = src >= 0
        out[ok, k - 1] = addrs[ok] - full[src[ok]]
    np.clip(out, INT32_MIN, INT32_MAX, out=out)
    return out
