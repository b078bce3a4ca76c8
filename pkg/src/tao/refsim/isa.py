"""Synthetic load/store ISA executed by the reference core.

Instructions are word-sized (4 bytes) and live at ``PC_BASE + 4 * index``.
Data memory is word addressed (8-byte words); a memory operand resolves to
``(reg[base] + imm) mod MEM_WORDS`` and is reported as a byte address.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import InvalidProgram

NUM_REGS = 16
INSN_BYTES = 4
WORD_BYTES = 8
PC_BASE = 0x1000
DATA_BASE = 0x100000
MEM_WORDS = 1 << 20
MASK64 = (1 << 64) - 1


class Opcode(str, enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    LOAD = "load"
    STORE = "store"
    BRANCH_EQ = "branch_eq"
    BRANCH_NE = "branch_ne"
    JUMP = "jump"
    NOP_EXPLICIT = "nop_explicit"


ALU_OPS = frozenset({Opcode.ADD, Opcode.SUB, Opcode.MUL})
COND_BRANCHES = frozenset({Opcode.BRANCH_EQ, Opcode.BRANCH_NE})
MEM_OPS = frozenset({Opcode.LOAD, Opcode.STORE})


@dataclass(frozen=True)
class Instruction:
    """One static instruction.

    ALU ops read one or two sources; with a single source the immediate is
    the second operand. ``load dst, [src0 + imm]``; ``store [src0 + imm], src1``.
    Branches compare ``src0`` and ``src1`` and jump to instruction index
    ``target``.
    """

    op: Opcode
    dst: int | None = None
    srcs: tuple[int, ...] = ()
    imm: int = 0
    target: int | None = None

    def to_json(self) -> dict:
        return {
            "op": self.op.value,
            "dst": self.dst,
            "srcs": list(self.srcs),
            "imm": self.imm,
            "target": self.target,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Instruction":
        try:
            op = Opcode(d["op"])
        except (KeyError, ValueError) as exc:
            raise InvalidProgram(f"bad opcode in {d!r}") from exc
        return cls(op, d.get("dst"), tuple(d.get("srcs", ())), int(d.get("imm", 0)), d.get("target"))


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    initial_registers: tuple[int, ...] = (0,) * NUM_REGS
    data_segment: tuple[int, ...] = ()
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __len__(self) -> int:
        return len(self.instructions)

    def pc_of(self, index: int) -> int:
        return PC_BASE + INSN_BYTES * index

    def validate(self) -> None:
        if len(self.initial_registers) != NUM_REGS:
            raise InvalidProgram(f"expected {NUM_REGS} initial registers, got {len(self.initial_registers)}")
        if len(self.data_segment) > MEM_WORDS:
            raise InvalidProgram("data segment exceeds memory")
        n = len(self.instructions)
        for k, ins in enumerate(self.instructions):
            where = f"instruction {k} ({ins.op.value})"
            regs = list(ins.srcs) + ([ins.dst] if ins.dst is not None else [])
            if any(not (0 <= r < NUM_REGS) for r in regs):
                raise InvalidProgram(f"{where}: register out of range")
            if ins.op in ALU_OPS:
                if ins.dst is None or len(ins.srcs) not in (1, 2):
                    raise InvalidProgram(f"{where}: needs dst and 1-2 sources")
            elif ins.op is Opcode.LOAD:
                if ins.dst is None or len(ins.srcs) != 1:
                    raise InvalidProgram(f"{where}: load needs dst and base register")
            elif ins.op is Opcode.STORE:
                if ins.dst is not None or len(ins.srcs) != 2:
                    raise InvalidProgram(f"{where}: store needs base and value registers")
            elif ins.op in COND_BRANCHES or ins.op is Opcode.JUMP:
                want = 2 if ins.op in COND_BRANCHES else 0
                if len(ins.srcs) != want or ins.dst is not None:
                    raise InvalidProgram(f"{where}: bad operands")
                if ins.target is None or not (0 <= ins.target <= n):
                    raise InvalidProgram(f"{where}: target {ins.target} out of range")
            elif ins.op is Opcode.NOP_EXPLICIT:
                if ins.dst is not None or ins.srcs:
                    raise InvalidProgram(f"{where}: nop takes no operands")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "instructions": [i.to_json() for i in self.instructions],
            "initial_registers": list(self.initial_registers),
            "data_segment": list(self.data_segment),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Program":
        prog = cls(
            tuple(Instruction.from_json(i) for i in d["instructions"]),
            tuple(int(r) for r in d["initial_registers"]),
            tuple(int(w) for w in d.get("data_segment", ())),
            d.get("name", ""),
            dict(d.get("meta", {})),
        )
        prog.validate()
        return prog
