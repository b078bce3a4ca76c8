"""Functional and cycle-level execution of synthetic programs.

The detailed model is a trace-driven out-of-order core: a fetch engine that
delivers up to ``fetch_width`` instructions per cycle (fetch groups end on
taken control flow and cache-line changes), an instruction cache behind a
shared L2, a ROB of ``rob_size`` entries allocated at decode, dataflow issue
limited only by operand readiness, and in-order commit of up to
``fetch_width`` instructions per cycle.  On a direction misprediction the
fetch engine follows the predicted path until the branch resolves; those
instructions appear in the trace as squashed records.  Every cycle the fetch
stage is blocked by a full ROB produces one pipeline nop record.

Clock conventions (all in cycles):

* ``fetch_clock`` of a record is the cycle the fetch engine started on it,
  which is the decode-entry cycle of the previous record in the trace.
* ``fetch_clock + fetch_lat`` is the cycle the record entered decode.
* ``complete_clock`` is the commit cycle of a retained instruction, the
  squash cycle of a wrong-path instruction, and the decode-entry cycle of a
  nop.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import BudgetExceeded, EmptyTrace
from .cache import L1, L2, MEM, Hierarchy
from .config import MicroArchConfig
from .isa import (
    DATA_BASE, INSN_BYTES, MASK64, MEM_WORDS, PC_BASE, WORD_BYTES, Opcode, Program,
)
from .predictors import make_predictor
from .trace import PIPELINE_NOP, DetailedRecord, FunctionalRecord

# op codes used by the inner loops
_ADD, _SUB, _MUL, _LOAD, _STORE, _BEQ, _BNE, _JMP, _NOP = range(9)
_CODE = {
    Opcode.ADD: _ADD, Opcode.SUB: _SUB, Opcode.MUL: _MUL, Opcode.LOAD: _LOAD,
    Opcode.STORE: _STORE, Opcode.BRANCH_EQ: _BEQ, Opcode.BRANCH_NE: _BNE,
    Opcode.JUMP: _JMP, Opcode.NOP_EXPLICIT: _NOP,
}
EXEC_LATENCY = {_ADD: 1, _SUB: 1, _MUL: 3, _BEQ: 1, _BNE: 1, _JMP: 1, _NOP: 1, _STORE: 1}


def _decode(program: Program):
    out = []
    for ins in program.instructions:
        s = ins.srcs
        out.append((
            _CODE[ins.op],
            ins.dst,
            s[0] if len(s) > 0 else None,
            s[1] if len(s) > 1 else None,
            ins.imm,
            ins.target,
        ))
    return out


def _interpret(program: Program, budget: int, require_halt: bool):
    """Architectural execution; returns a list of (index, word, taken)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    program.validate()
    code = _decode(program)
    regs = list(program.initial_registers)
    data = program.data_segment
    ndata = len(data)
    mem: dict[int, int] = {}
    n = len(code)
    steps = []
    append = steps.append
    idx = 0
    while idx < n:
        if len(steps) >= budget:
            if require_halt:
                raise BudgetExceeded(f"program did not halt within {budget} instructions")
            break
        c, dst, s0, s1, imm, tgt = code[idx]
        if c <= _MUL:
            a = regs[s0]
            b = regs[s1] if s1 is not None else imm
            if c == _ADD:
                v = a + b
            elif c == _SUB:
                v = a - b
            else:
                v = a * b
            regs[dst] = v & MASK64
            append((idx, None, None))
            idx += 1
        elif c == _LOAD:
            w = (regs[s0] + imm) % MEM_WORDS
            v = mem.get(w)
            if v is None:
                v = data[w] if w < ndata else 0
            regs[dst] = v & MASK64
            append((idx, w, None))
            idx += 1
        elif c == _STORE:
            w = (regs[s0] + imm) % MEM_WORDS
            mem[w] = regs[s1]
            append((idx, w, None))
            idx += 1
        elif c == _BEQ or c == _BNE:
            taken = (regs[s0] == regs[s1]) == (c == _BEQ)
            append((idx, None, taken))
            idx = tgt if taken else idx + 1
        elif c == _JMP:
            append((idx, None, None))
            idx = tgt
        else:
            append((idx, None, None))
            idx += 1
    return steps


def run_functional(program: Program, budget: int, require_halt: bool = False) -> list[FunctionalRecord]:
    """Execute ``program`` architecturally, emitting one record per instruction.

    Execution stops when control falls off the end of the program or after
    ``budget`` instructions. With ``require_halt`` reaching the budget first
    raises :class:`BudgetExceeded`.
    """
    steps = _interpret(program, budget, require_halt)
    insns = program.instructions
    out = []
    for idx, w, taken in steps:
        ins = insns[idx]
        out.append(FunctionalRecord(
            PC_BASE + INSN_BYTES * idx,
            ins.op.value,
            ins.dst,
            ins.srcs,
            None if w is None else DATA_BASE + WORD_BYTES * w,
            taken,
        ))
    return out


def run_detailed(program: Program, uarch: MicroArchConfig, budget: int,
                 require_halt: bool = False) -> list[DetailedRecord]:
    """Cycle-level execution of ``program`` on ``uarch`` (see module docstring)."""
    uarch.validate()
    steps = _interpret(program, budget, require_halt)
    insns = program.instructions
    code = _decode(program)
    n_static = len(code)
    hier = Hierarchy(uarch.l1i, uarch.l1d, uarch.l2)
    bp = make_predictor(uarch.branch_predictor)
    fw = uarch.fetch_width
    rob = uarch.rob_size
    level_lat = {L1: uarch.l1_latency, L2: uarch.l2_latency, MEM: uarch.mem_latency}
    ipen = {L2: uarch.l2_latency, MEM: uarch.mem_latency}
    line_shift = uarch.l1i.line_bytes.bit_length() - 1

    out: list[DetailedRecord] = []
    emit = out.append
    prev_done = 0       # decode-entry cycle of the last emitted record
    group_d = 0         # decode-entry cycle of the current fetch group
    group_n = fw        # slots used in the current group; full forces a new group
    redirect = 0        # earliest decode-entry cycle after a redirect
    cur_line = -1
    reg_ready = [0] * 16
    store_ready: dict[int, int] = {}
    commits: list[int] = []
    last_commit = 0

    for i, (idx, w, taken) in enumerate(steps):
        c, dst, s0, s1, imm, tgt = code[idx]
        ins = insns[idx]
        pc = PC_BASE + INSN_BYTES * idx

        # fetch
        cand = group_d if group_n < fw else group_d + 1
        if cand < redirect:
            cand = redirect
        imiss = False
        line = pc >> line_shift
        if line != cur_line:
            cur_line = line
            if cand <= group_d:
                cand = group_d + 1
            lvl = hier.inst(pc)
            if lvl != L1:
                imiss = True
                cand += ipen[lvl]
        if i >= rob:
            rob_free = commits[i - rob] + 1
            if rob_free > cand:
                for cyc in range(max(cand, group_d + 1), rob_free):
                    emit(DetailedRecord(pc, PIPELINE_NOP, None, (), None, None,
                                        prev_done, cyc - prev_done, cyc, nop=True))
                    prev_done = cyc
                cand = rob_free
        d = cand
        if d == group_d:
            group_n += 1
        else:
            group_d = d
            group_n = 1

        # execute
        ready = d + 1
        if s0 is not None and reg_ready[s0] > ready:
            ready = reg_ready[s0]
        if s1 is not None and reg_ready[s1] > ready:
            ready = reg_ready[s1]
        dlevel = None
        addr = None
        if c == _LOAD:
            addr = DATA_BASE + WORD_BYTES * w
            fwd = store_ready.get(w)
            if fwd is not None and fwd > ready:
                ready = fwd
            dlevel = hier.data(addr)
            lat = level_lat[dlevel]
        elif c == _STORE:
            addr = DATA_BASE + WORD_BYTES * w
            dlevel = hier.data(addr)
            lat = 1
            store_ready[w] = ready + 1
        else:
            lat = EXEC_LATENCY[c]
        done = ready + lat
        if dst is not None:
            reg_ready[dst] = done
        commit = done + 1
        if commit < last_commit:
            commit = last_commit
        if i >= fw and commits[i - fw] + 1 > commit:
            commit = commits[i - fw] + 1
        commits.append(commit)
        last_commit = commit

        mispred = False
        if c == _BEQ or c == _BNE:
            pred = bp.predict(pc)
            bp.update(pc, taken)
            mispred = pred != taken
            if taken or mispred:
                group_n = fw
        elif c == _JMP:
            group_n = fw

        emit(DetailedRecord(pc, ins.op.value, dst, ins.srcs, addr, taken,
                            prev_done, d - prev_done, commit,
                            mispred=mispred, dlevel=dlevel, imiss=imiss))
        prev_done = d

        if mispred:
            # follow the predicted path until the branch resolves
            resolve = done
            widx = tgt if pred else idx + 1
            wg_d, wg_n = group_d, group_n
            wline = cur_line
            count = 0
            while count < rob and 0 <= widx < n_static:
                wcand = wg_d if wg_n < fw else wg_d + 1
                wl = (PC_BASE + INSN_BYTES * widx) >> line_shift
                if wl != wline:
                    wline = wl
                    if wcand <= wg_d:
                        wcand = wg_d + 1
                if wcand > resolve:
                    break
                if wcand == wg_d:
                    wg_n += 1
                else:
                    wg_d, wg_n = wcand, 1
                wc, wdst, _, _, _, wtgt = code[widx]
                wins = insns[widx]
                emit(DetailedRecord(PC_BASE + INSN_BYTES * widx, wins.op.value, wdst, wins.srcs,
                                    None, None, prev_done, wcand - prev_done, resolve,
                                    squashed=True))
                prev_done = wcand
                count += 1
                if wc == _JMP:
                    widx, wg_n = wtgt, fw
                elif wc == _BEQ or wc == _BNE:
                    if bp.predict(PC_BASE + INSN_BYTES * widx):
                        widx, wg_n = wtgt, fw
                    else:
                        widx += 1
                else:
                    widx += 1
            group_d = max(group_d, prev_done)
            group_n = fw
            redirect = resolve + 2
            cur_line = -1 if wline != cur_line else cur_line
    return out


@dataclass(frozen=True)
class PerfMetrics:
    cpi: float
    l1d_mpki: float
    l2_mpki: float
    branch_mpki: float
    l1i_mpki: float
    mispredict_rate: float
    total_cycles: int
    instruction_count: int
    # raw event counts backing the rates
    l1d_accesses: int = 0
    l1d_misses: int = 0
    l2_misses: int = 0
    branches: int = 0
    mispredictions: int = 0

    @property
    def l1_miss_rate(self) -> float:
        return self.l1d_misses / self.l1d_accesses if self.l1d_accesses else 0.0

    @property
    def l2_miss_rate(self) -> float:
        return self.l2_misses / self.l1d_misses if self.l1d_misses else 0.0

    def to_json(self) -> dict:
        return asdict(self)


def stats(trace: list[DetailedRecord]) -> PerfMetrics:
    """Aggregate metrics over the retained records of a detailed trace.

    L1D/L2 counts refer to data accesses only; instruction-side misses are
    reported separately as ``l1i_mpki``.
    """
    retained = [r for r in trace if not (r.squashed or r.nop)]
    if not retained:
        raise EmptyTrace("trace has no retained instructions")
    n = len(retained)
    acc = l1m = l2m = br = mp = im = 0
    for r in retained:
        if r.dlevel is not None:
            acc += 1
            if r.dlevel != L1:
                l1m += 1
                if r.dlevel == MEM:
                    l2m += 1
        if r.taken is not None:
            br += 1
            if r.mispred:
                mp += 1
        if r.imiss:
            im += 1
    total = retained[-1].complete_clock
    k = 1000.0 / n
    return PerfMetrics(
        cpi=total / n, l1d_mpki=l1m * k, l2_mpki=l2m * k, branch_mpki=mp * k, l1i_mpki=im * k,
        mispredict_rate=mp / br if br else 0.0, total_cycles=total, instruction_count=n,
        l1d_accesses=acc, l1d_misses=l1m, l2_misses=l2m, branches=br, mispredictions=mp,
    )


def retained(trace: list[DetailedRecord]) -> list[DetailedRecord]:
    return [r for r in trace if not (r.squashed or r.nop)]

