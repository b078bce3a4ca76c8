"""Seeded synthetic kernels standing in for benchmark programs.

Every program is an outer loop (counter in r1) around a body of blocks:
straight-line arithmetic, strided array loops, pointer chasing over a random
cycle, data-dependent branches and alternating-pattern branches.  The
profile shifts the block mix.  Register conventions:

    r0  zero                r1  outer counter       r2  inner counter
    r3  stream pointer      r4  chase pointer       r5  branch-data pointer
    r6  toggle (0/1)        r7  constant 1          r8-r15 temporaries
"""

from __future__ import annotations

import enum
import random

from .isa import NUM_REGS, Instruction, Opcode, Program

OUTER_ITERATIONS = 1 << 20

TEMPS = tuple(range(8, 16))
STREAM_BASE = 0
CHASE_BASE = 1 << 16
BRDATA_BASE = 1 << 17
BRDATA_WORDS = 4096


class Profile(str, enum.Enum):
    COMPUTE = "compute"
    MEMORY = "memory"
    BRANCHY = "branchy"
    MIXED = "mixed"


# block kind -> weight per profile
_MIX = {
    Profile.COMPUTE: {"alu": 6, "stream": 2, "chase": 1, "dbranch": 1, "pbranch": 2, "jump": 1},
    Profile.MEMORY: {"alu": 1, "stream": 6, "chase": 3, "dbranch": 1, "pbranch": 1, "jump": 0},
    Profile.BRANCHY: {"alu": 1, "stream": 1, "chase": 1, "dbranch": 3, "pbranch": 5, "jump": 1},
    Profile.MIXED: {"alu": 3, "stream": 3, "chase": 2, "dbranch": 2, "pbranch": 3, "jump": 1},
}


class _Builder:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.code: list = []  # Instruction or (op, dst, srcs, imm, label)
        self.labels: dict[str, int] = {}
        self._n = 0

    def label(self) -> str:
        self._n += 1
        return f"L{self._n}"

    def mark(self, name: str) -> None:
        self.labels[name] = len(self.code)

    def emit(self, op, dst=None, srcs=(), imm=0, target=None):
        self.code.append((op, dst, tuple(srcs), imm, target))

    def alu(self, k: int, extra_src: int | None = None) -> None:
        rng = self.rng
        for j in range(k):
            op = rng.choice((Opcode.ADD, Opcode.ADD, Opcode.SUB, Opcode.MUL))
            dst = rng.choice(TEMPS)
            a = extra_src if (extra_src is not None and j == 0) else rng.choice(TEMPS)
            if rng.random() < 0.5:
                self.emit(op, dst, (a, rng.choice(TEMPS)))
            else:
                self.emit(op, dst, (a,), imm=rng.randint(1, 9))

    def resolve(self) -> tuple[Instruction, ...]:
        out = []
        for op, dst, srcs, imm, target in self.code:
            if isinstance(target, str):
                target = self.labels[target]
            out.append(Instruction(op, dst, srcs, imm, target))
        return tuple(out)


def _stream(b: _Builder, footprint: int, dense: bool = False) -> None:
    rng = b.rng
    extra, work = ((1, 3), (0, 1)) if dense else ((0, 2), (0, 2))
    stride = rng.choice((1, 1, 2, 4, 8))
    trips = rng.randint(4, 32)
    base = STREAM_BASE + rng.randrange(0, max(1, footprint - trips * stride))
    b.emit(Opcode.ADD, 3, (0,), imm=base)
    b.emit(Opcode.ADD, 2, (0,), imm=trips)
    top = b.label()
    b.mark(top)
    t = rng.choice(TEMPS)
    b.emit(Opcode.LOAD, t, (3,), imm=0)
    for _ in range(rng.randint(*extra)):
        b.emit(Opcode.LOAD, rng.choice(TEMPS), (3,), imm=rng.randint(1, 3))
    b.alu(rng.randint(*work), extra_src=t)
    if rng.random() < 0.6:
        b.emit(Opcode.STORE, None, (3, rng.choice(TEMPS)), imm=rng.randint(0, 3))
    b.emit(Opcode.ADD, 3, (3,), imm=stride)
    b.emit(Opcode.SUB, 2, (2,), imm=1)
    b.emit(Opcode.BRANCH_NE, None, (2, 0), target=top)


def _chase(b: _Builder) -> None:
    rng = b.rng
    b.emit(Opcode.ADD, 2, (0,), imm=rng.randint(4, 16))
    top = b.label()
    b.mark(top)
    b.emit(Opcode.LOAD, 4, (4,), imm=0)
    b.alu(rng.randint(1, 2), extra_src=4)
    b.emit(Opcode.SUB, 2, (2,), imm=1)
    b.emit(Opcode.BRANCH_NE, None, (2, 0), target=top)


def _dbranch(b: _Builder) -> None:
    rng = b.rng
    t = rng.choice(TEMPS)
    b.emit(Opcode.LOAD, t, (5,), imm=0)
    b.emit(Opcode.ADD, 5, (5,), imm=1)
    skip = b.label()
    b.emit(rng.choice((Opcode.BRANCH_EQ, Opcode.BRANCH_NE)), None, (t, 0), target=skip)
    b.alu(rng.randint(1, 2))
    b.mark(skip)


def _pbranch(b: _Builder) -> None:
    rng = b.rng
    b.emit(Opcode.SUB, 6, (7, 6))  # r6 alternates 0/1
    skip = b.label()
    b.emit(rng.choice((Opcode.BRANCH_EQ, Opcode.BRANCH_NE)), None, (6, 0), target=skip)
    b.alu(rng.randint(1, 2))
    b.mark(skip)


def _jump(b: _Builder) -> None:
    skip = b.label()
    b.emit(Opcode.JUMP, target=skip)
    b.alu(b.rng.randint(1, 2))
    b.mark(skip)


def generate_program(seed: int, profile: Profile | str, length: int) -> Program:
    """Build a terminating program of exactly ``length`` static instructions."""
    profile = Profile(profile)
    if length < 8:
        raise ValueError("length must be >= 8")
    rng = random.Random(f"{seed}:{profile.value}:{length}")
    b = _Builder(rng)
    # data working set in words; L1D sizes of the toy space span 128-1024 words
    footprint = {
        Profile.COMPUTE: 96, Profile.MEMORY: 512, Profile.BRANCHY: 192, Profile.MIXED: 256,
    }[profile] * rng.choice((1, 2, 3))

    b.mark("outer")
    b.emit(Opcode.ADD, 5, (0,), imm=BRDATA_BASE + rng.randrange(BRDATA_WORDS // 2))
    tail = 2  # outer-loop decrement + back edge
    weights = _MIX[profile]
    kinds = list(weights)
    while True:
        room = length - tail - len(b.code)
        if room < 12:
            break
        kind = rng.choices(kinds, weights=[weights[k] for k in kinds])[0]
        if kind == "alu":
            b.alu(rng.randint(2, 6))
        elif kind == "stream":
            _stream(b, footprint, dense=profile is Profile.MEMORY)
        elif kind == "chase":
            _chase(b)
        elif kind == "dbranch":
            _dbranch(b)
        elif kind == "pbranch":
            _pbranch(b)
        else:
            _jump(b)

    # pad to length; branchy kernels pad with branches to the next instruction
    while len(b.code) < length - tail:
        if profile is Profile.BRANCHY and rng.random() < 0.5:
            nxt = b.label()
            b.emit(Opcode.BRANCH_EQ, None, (0, 0), target=nxt)
            b.mark(nxt)
        else:
            b.alu(1)
    b.emit(Opcode.SUB, 1, (1,), imm=1)
    b.emit(Opcode.BRANCH_NE, None, (1, 0), target="outer")
    insns = b.resolve()

    if profile is Profile.BRANCHY:
        insns = _ensure_branch_fraction(insns, 0.25, rng)

    regs = [0] * NUM_REGS
    regs[1] = OUTER_ITERATIONS
    regs[4] = CHASE_BASE
    regs[7] = 1
    for r in TEMPS:
        regs[r] = rng.randint(0, 1000)
    data = _data_segment(rng, profile, footprint)
    prog = Program(insns, tuple(regs), data, name=f"{profile.value}-{seed}-{length}",
                   meta={"seed": seed, "profile": profile.value, "length": length})
    prog.validate()
    return prog


def _ensure_branch_fraction(insns, frac, rng):
    """Replace non-memory arithmetic with fall-through branches until ``frac`` is met."""
    insns = list(insns)
    n = len(insns)
    need = int(frac * n + 0.999999) - sum(i.op in (Opcode.BRANCH_EQ, Opcode.BRANCH_NE) for i in insns)
    cands = [k for k, i in enumerate(insns) if i.op in (Opcode.ADD, Opcode.SUB, Opcode.MUL)
             and i.dst is not None and i.dst >= 8]
    rng.shuffle(cands)
    for k in cands[:max(0, need)]:
        insns[k] = Instruction(Opcode.BRANCH_EQ, None, (0, 0), 0, k + 1)
    return tuple(insns)


def _data_segment(rng: random.Random, profile: Profile, footprint: int) -> tuple[int, ...]:
    size = BRDATA_BASE + BRDATA_WORDS
    data = [0] * size
    for w in range(1 << 15):
        data[STREAM_BASE + w] = rng.randrange(1 << 16)
    # single random cycle over the chase region
    span = max(16, footprint // 2)
    order = list(range(span))
    rng.shuffle(order)
    for a, b in zip(order, order[1:] + order[:1]):
        data[CHASE_BASE + a] = CHASE_BASE + b
    bias = {Profile.BRANCHY: 0.6, Profile.MIXED: 0.8}.get(profile, 0.9)
    for w in range(BRDATA_WORDS):
        data[BRDATA_BASE + w] = 0 if rng.random() < bias else 1
    return tuple(data)
