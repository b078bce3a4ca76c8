"""Functional and detailed trace records and their JSON-Lines encoding."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable

from ..errors import MalformedTrace

FUNCTIONAL_FIELDS = ("pc", "op", "dst", "srcs", "mem_addr", "taken")
DETAILED_FIELDS = FUNCTIONAL_FIELDS + (
    "fetch_clock", "fetch_lat", "complete_clock", "squashed", "nop", "mispred", "dlevel", "imiss",
)
PIPELINE_NOP = "nop"
DLEVELS = ("L1", "L2", "MEM")


@dataclass(slots=True)
class FunctionalRecord:
    pc: int
    op: str
    dst: int | None
    srcs: tuple
    mem_addr: int | None
    taken: bool | None

    def key(self) -> tuple[int, str]:
        return (self.pc, self.op)

    def to_json(self) -> dict:
        return {f: (list(self.srcs) if f == "srcs" else getattr(self, f)) for f in FUNCTIONAL_FIELDS}


@dataclass(slots=True)
class DetailedRecord:
    pc: int
    op: str
    dst: int | None
    srcs: tuple
    mem_addr: int | None
    taken: bool | None
    fetch_clock: int
    fetch_lat: int
    complete_clock: int
    squashed: bool = False
    nop: bool = False
    mispred: bool = False
    dlevel: str | None = None
    imiss: bool = False

    @property
    def retained(self) -> bool:
        return not (self.squashed or self.nop)

    @property
    def fetch_done(self) -> int:
        return self.fetch_clock + self.fetch_lat

    def key(self) -> tuple[int, str]:
        return (self.pc, self.op)

    def to_json(self) -> dict:
        return {f: (list(self.srcs) if f == "srcs" else getattr(self, f)) for f in DETAILED_FIELDS}


FunctionalTrace = list  # list[FunctionalRecord]
DetailedTrace = list  # list[DetailedRecord]


def _record_from_json(d: dict, lineno: int):
    keys = tuple(d)
    if keys == FUNCTIONAL_FIELDS:
        cls = FunctionalRecord
    elif keys == DETAILED_FIELDS:
        cls = DetailedRecord
    else:
        extra = sorted(set(keys) - set(DETAILED_FIELDS))
        detail = f"unknown fields {extra}" if extra else f"fields {list(keys)} not in canonical order"
        raise MalformedTrace(f"line {lineno}: {detail}")
    d = dict(d)
    d["srcs"] = tuple(d["srcs"])
    if cls is DetailedRecord and d["dlevel"] not in (None,) + DLEVELS:
        raise MalformedTrace(f"line {lineno}: bad dlevel {d['dlevel']!r}")
    return cls(**d)


def write_jsonl(records: Iterable, fh: IO[str], header: dict | None = None) -> None:
    if header is not None:
        fh.write(json.dumps({"_header": header}, sort_keys=True) + "\n")
    for r in records:
        fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_jsonl(fh: IO[str]) -> tuple[list, dict | None]:
    """Parse a trace file; returns (records, header-or-None)."""
    header = None
    out = []
    kind = None
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {lineno}: {exc}") from exc
        if lineno == 1 and "_header" in d:
            header = d["_header"]
            continue
        rec = _record_from_json(d, lineno)
        if kind is None:
            kind = type(rec)
        elif type(rec) is not kind:
            raise MalformedTrace(f"line {lineno}: mixed functional and detailed records")
        out.append(rec)
    return out, header


def save_trace(path, records, header: dict | None = None) -> None:
    with open(path, "w") as fh:
        write_jsonl(records, fh, header)


def load_trace(path) -> tuple[list, dict | None]:
    with open(path) as fh:
        return read_jsonl(fh)
