"""Training-set construction from detailed/functional trace pairs.

Squashed wrong-path records and pipeline nops are dropped from the detailed
trace and their fetch-time cost is charged to the next retained instruction:
with ``fetch_done = fetch_clock + fetch_lat``, the fetch label of a retained
record is the gap between its ``fetch_done`` and that of the previous
retained record, and its execution label is ``complete_clock - fetch_done``.
The labels telescope, so the retire-clock recurrence over them ends exactly
at the detailed trace's last commit cycle.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedTrace, SequenceMismatch, ValidationError
from .features import FeatureSchema, FeatureTable, featurize_trace
from .refsim.trace import DetailedRecord, FunctionalRecord

DLEVEL_CLASSES = ("NONE", "L1", "L2", "MEM")
DLEVEL_INDEX = {None: 0, "NONE": 0, "L1": 1, "L2": 2, "MEM": 3}
MAGIC = b"TAODS1"


@dataclass(frozen=True, slots=True)
class Labels:
    fetch: int
    exec: int
    mispredicted: bool
    dlevel: str  # one of DLEVEL_CLASSES
    icache_miss: bool

    def as_tuple(self) -> tuple:
        return (self.fetch, self.exec, self.mispredicted, self.dlevel, self.icache_miss)


@dataclass(frozen=True, slots=True)
class AdjustedRecord:
    pc: int
    op: str
    dst: int | None
    srcs: tuple
    mem_addr: int | None
    taken: bool | None
    labels: Labels

    def key(self) -> tuple[int, str]:
        return (self.pc, self.op)


def align(detailed: list[DetailedRecord]) -> list[AdjustedRecord]:
    """Drop squashed/nop records and re-attribute their fetch time."""
    out = []
    prev_clock = None
    prev_done = 0
    for k, r in enumerate(detailed):
        if prev_clock is not None and r.fetch_clock < prev_clock:
            raise MalformedTrace(f"record {k}: fetch_clock decreases ({r.fetch_clock} < {prev_clock})")
        prev_clock = r.fetch_clock
        if r.squashed or r.nop:
            continue
        done = r.fetch_clock + r.fetch_lat
        fetch = done - prev_done
        exe = r.complete_clock - done
        if fetch < 0 or exe < 0:
            raise MalformedTrace(f"record {k}: negative derived label (fetch={fetch}, exec={exe})")
        prev_done = done
        dl = "NONE" if r.mem_addr is None else (r.dlevel or "L1")
        out.append(AdjustedRecord(r.pc, r.op, r.dst, tuple(r.srcs), r.mem_addr, r.taken,
                                  Labels(fetch, exe, bool(r.mispred), dl, bool(r.imiss))))
    return out


def associate(adjusted: list[AdjustedRecord], functional: list[FunctionalRecord]):
    """Pair records position-wise, checking (PC, opcode) agreement."""
    n = min(len(adjusted), len(functional))
    for k in range(n):
        a, f = adjusted[k], functional[k]
        if a.pc != f.pc or a.op != f.op:
            raise SequenceMismatch(k, (f.pc, f.op), (a.pc, a.op))
    if len(adjusted) != len(functional):
        exp = functional[n].key() if n < len(functional) else None
        got = adjusted[n].key() if n < len(adjusted) else None
        raise SequenceMismatch(n, exp, got)
    return [(f, a.labels) for f, a in zip(functional, adjusted)]


@dataclass
class Dataset:
    """Per-instruction feature and label columns plus the kept sample rows.

    Rows belong to traces delimited by ``offsets``; a sample at row ``i``
    sees the ``context`` rows before it within its own trace (zero padding
    before the trace start).
    """

    schema: FeatureSchema
    context: int
    features: FeatureTable
    fetch: np.ndarray      # (R,) int64
    exec: np.ndarray       # (R,) int64
    mispred: np.ndarray    # (R,) uint8
    dlevel: np.ndarray     # (R,) uint8 index into DLEVEL_CLASSES
    imiss: np.ndarray      # (R,) uint8
    offsets: np.ndarray    # (n_traces + 1,) int64
    samples: np.ndarray    # (S,) int64 row indices
    meta: dict | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_rows(self) -> int:
        return len(self.fetch)

    def trace_start(self) -> np.ndarray:
        """For every row, the row index where its trace begins."""
        starts = np.empty(self.n_rows, np.int64)
        for a, b in zip(self.offsets[:-1], self.offsets[1:]):
            starts[a:b] = a
        return starts

    def label_row(self, i: int) -> tuple:
        return (int(self.fetch[i]), int(self.exec[i]), bool(self.mispred[i]),
                DLEVEL_CLASSES[self.dlevel[i]], bool(self.imiss[i]))

    def subset(self, samples: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.context, self.features, self.fetch, self.exec, self.mispred,
                       self.dlevel, self.imiss, self.offsets, np.asarray(samples, np.int64), self.meta)

    def prefix(self, n: int) -> "Dataset":
        """Keep ``n`` samples, taken from the start of every trace in proportion to its size.

        Shares are rounded by largest remainder, so the total is exactly
        ``min(n, len(self))``.  This is the sample set of shorter runs of the
        same programs.
        """
        n = min(max(n, 0), len(self))
        per = [np.sort(self.samples[(self.samples >= a) & (self.samples < b)])
               for a, b in zip(self.offsets[:-1], self.offsets[1:])]
        quota = np.array([len(p) for p in per], np.float64) * (n / max(len(self), 1))
        take = np.floor(quota).astype(np.int64)
        for k in np.argsort(-(quota - take), kind="stable")[:n - int(take.sum())]:
            take[k] += 1
        return self.subset(np.concatenate([p[:t] for p, t in zip(per, take)] or [np.zeros(0, np.int64)]))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for col in self._columns():
            h.update(np.ascontiguousarray(col[1]).tobytes())
        h.update(self.schema.hash().encode())
        h.update(str(self.context).encode())
        return h.hexdigest()[:16]

    def _columns(self):
        f = self.features
        return [
            ("opcode", f.opcode), ("regs", f.regs), ("branch", f.branch), ("dist", f.dist),
            ("flags", f.flags), ("fetch", self.fetch), ("exec", self.exec),
            ("mispred", self.mispred), ("dlevel", self.dlevel), ("imiss", self.imiss),
            ("offsets", self.offsets), ("samples", self.samples),
        ]

    # binary columnar file
    def save(self, path, extra_header: dict | None = None) -> None:
        cols = self._columns()
        header = {
            "schema_hash": self.schema.hash(),
            "schema": self.schema.to_json(),
            "sample_count": int(len(self.samples)),
            "row_count": int(self.n_rows),
            "context": self.context,
            "columns": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in cols],
            "meta": self.meta or {},
        }
        if extra_header:
            header.update(extra_header)
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, a in cols:
                fh.write(np.ascontiguousarray(a).tobytes())

    @classmethod
    def load(cls, path, expect_schema_hash: str | None = None) -> "Dataset":
        with open(path, "rb") as fh:
            if fh.read(6) != MAGIC:
                raise ValidationError(f"{path}: not a dataset file (bad magic at offset 0)")
            (n,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(n))
            cols = {}
            for c in header["columns"]:
                dt = np.dtype(c["dtype"])
                count = int(np.prod(c["shape"])) if c["shape"] else 1
                raw = fh.read(count * dt.itemsize)
                if len(raw) != count * dt.itemsize:
                    raise ValidationError(f"{path}: truncated column {c['name']!r}")
                cols[c["name"]] = np.frombuffer(raw, dt).reshape(c["shape"]).copy()
        schema = FeatureSchema.from_json(header["schema"])
        if schema.hash() != header["schema_hash"]:
            raise ValidationError(f"{path}: schema hash does not match embedded schema")
        if expect_schema_hash is not None and header["schema_hash"] != expect_schema_hash:
            from .errors import SchemaMismatch
            raise SchemaMismatch(f"{path}: schema hash {header['schema_hash']} != {expect_schema_hash}")
        feats = FeatureTable(schema, cols["opcode"], cols["regs"], cols["branch"], cols["dist"], cols["flags"])
        ds = cls(schema, header["context"], feats, cols["fetch"], cols["exec"], cols["mispred"],
                 cols["dlevel"], cols["imiss"], cols["offsets"], cols["samples"], header.get("meta"))
        ds.header = header
        return ds

    def export_jsonl(self, fh) -> None:
        for i in self.samples:
            fv = self.features[int(i)]
            fetch, exe, mp, dl, im = self.label_row(int(i))
            fh.write(json.dumps({
                "row": int(i), "opcode_id": fv.opcode_id,
                "register_bitmap": fv.register_bitmap.tolist(),
                "branch_history": fv.branch_history.tolist(),
                "access_distance": fv.access_distance.tolist(),
                "is_load": fv.is_load, "is_store": fv.is_store, "is_branch": fv.is_branch,
                "labels": {"fetch": fetch, "exec": exe, "mispredicted": mp,
                           "data_access_level": dl, "icache_miss": im},
            }) + "\n")


def _label_columns(labels: list[Labels]):
    fetch = np.fromiter((l.fetch for l in labels), np.int64, len(labels))
    exe = np.fromiter((l.exec for l in labels), np.int64, len(labels))
    mp = np.fromiter((l.mispredicted for l in labels), np.uint8, len(labels))
    dl = np.fromiter((DLEVEL_INDEX[l.dlevel] for l in labels), np.uint8, len(labels))
    im = np.fromiter((l.icache_miss for l in labels), np.uint8, len(labels))
    return fetch, exe, mp, dl, im


def build_dataset(pairs, schema: FeatureSchema, context: int = 0, dedupe: bool = True) -> Dataset:
    """Featurize paired traces and drop exact duplicate samples.

    ``pairs`` is either one list of ``(FunctionalRecord, Labels)`` or a list
    of such lists (one per trace). A sample's identity is its model input,
    i.e. the feature rows of the instruction and its ``context`` predecessors,
    together with its labels; the first occurrence of each identity is kept.
    """
    if not pairs:
        raise ValidationError("build_dataset needs at least one pair")
    groups = [pairs] if isinstance(pairs[0], tuple) else list(pairs)
    tables, label_cols, offsets = [], [], [0]
    for g in groups:
        recs = [p[0] for p in g]
        tables.append(featurize_trace(recs, schema))
        label_cols.append(_label_columns([p[1] for p in g]))
        offsets.append(offsets[-1] + len(g))
    feats = FeatureTable.concat(tables)
    cols = [np.concatenate([lc[j] for lc in label_cols]) for j in range(5)]
    ds = Dataset(schema, context, feats, *cols, np.asarray(offsets, np.int64),
                 np.arange(offsets[-1], dtype=np.int64))
    if dedupe:
        ds.samples = dedupe_samples(ds)
    return ds


def row_ids(ds: Dataset) -> np.ndarray:
    """Dense integer id per distinct feature row (exact, via byte keys)."""
    seen: dict[bytes, int] = {}
    ids = np.empty(ds.n_rows, np.int64)
    f = ds.features
    for i in range(ds.n_rows):
        key = f.row_bytes(i)
        ids[i] = seen.setdefault(key, len(seen))
    return ids


def dedupe_samples(ds: Dataset) -> np.ndarray:
    ids = row_ids(ds)
    starts = ds.trace_start()
    N = ds.context
    keep = []
    seen = set()
    padded = np.concatenate([np.full(N, -1, np.int64), ids])
    for i in range(ds.n_rows):
        lo = i - N
        win = padded[i:i + N + 1].copy()  # rows i-N .. i
        if lo < starts[i]:
            win[: starts[i] - lo] = -1
        key = hashlib.blake2b(win.tobytes() + repr(ds.label_row(i)).encode(), digest_size=16).digest()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    return np.asarray(keep, np.int64)


def dataset_from_traces(functional, detailed, schema: FeatureSchema, context: int = 0,
                        dedupe: bool = True) -> Dataset:
    """align + associate + build for one or more (functional, detailed) trace pairs."""
    if functional and isinstance(functional[0], FunctionalRecord):
        functional, detailed = [functional], [detailed]
    groups = [associate(align(d), f) for f, d in zip(functional, detailed)]
    return build_dataset(groups, schema, context, dedupe)
