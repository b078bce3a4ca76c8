import json

import pytest
from hypothesis import given, strategies as st

from tao.errors import BudgetExceeded, InvalidConfig, InvalidProgram
from tao.refsim import (
    UARCH_A, Profile, generate_program, retained, run_detailed, run_functional, save_trace, stats,
)
from tao.refsim.config import DESIGN_SPACE, CacheConfig, MicroArchConfig, Predictor, grid_size
from tao.refsim.trace import DetailedRecord, FunctionalRecord, load_trace

from conftest import UARCHS, I, prog

PROFILES = [p.value for p in Profile]


def loop_program(trips=3):
    # 2 prologue instructions, then a 4-instruction counted loop
    return prog(
        I("add", 1, (0,), imm=trips),
        I("add", 2, (0,), imm=0),
        I("add", 2, (2,), imm=1),
        I("nop_explicit"),
        I("mul", 3, (2, 2)),
        I("branch_ne", None, (2, 1), target=2),
    )


def alternating_program(iters=20):
    """Branch at index 1 alternates taken / not taken."""
    return prog(
        I("sub", 1, (2, 1)),                       # r1 = 1 - r1
        I("branch_eq", None, (1, 0), target=3),    # taken when r1 == 0
        I("add", 3, (3,), imm=1),
        I("add", 4, (4,), imm=1),
        I("branch_ne", None, (4, 5), target=0),
        regs=[0, 0, 1, 0, 0, iters] + [0] * 10,
    )


# functional mode

def test_straight_line_functional_trace():
    p = prog(*[I("add", k + 1, (0,), imm=k) for k in range(5)])
    tr = run_functional(p, 100)
    assert len(tr) == 5
    assert all(isinstance(r, FunctionalRecord) for r in tr)
    assert not hasattr(tr[0], "fetch_clock")


def test_counted_loop_record_count():
    assert len(run_functional(loop_program(3), 1000)) == 14


def test_functional_deterministic():
    p = generate_program(5, "mixed", 200)
    a = run_functional(p, 10_000)
    b = run_functional(p, 10_000)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_budget_truncates_and_require_halt_raises():
    p = generate_program(1, "compute", 100)
    assert len(run_functional(p, 50)) == 50
    with pytest.raises(BudgetExceeded):
        run_functional(p, 50, require_halt=True)


def test_invalid_program_rejected():
    with pytest.raises(InvalidProgram):
        prog(I("add", 16, (0,)))
    with pytest.raises(InvalidProgram):
        prog(I("branch_eq", None, (0, 1), target=9))


# detailed mode

def test_no_hazard_trace_has_no_extra_records(perfect_uarch):
    p = prog(*[I("add", (k % 15) + 1, (0,), imm=k) for k in range(40)])
    d = run_detailed(p, perfect_uarch, 1000)
    assert len(retained(d)) == len(run_functional(p, 1000)) == len(d)
    assert not any(r.squashed or r.nop for r in d)


def test_alternating_branch_mispredicts_like_a_two_bit_counter():
    p = alternating_program(20)
    u = MicroArchConfig(branch_predictor=Predictor.TWO_BIT_LOCAL)
    d = run_detailed(p, u, 10_000)
    f = run_functional(p, 10_000)
    pc = p.pc_of(1)

    # hand-rolled 2-bit saturating counter starting weakly taken
    c, expect = 2, []
    for r in f:
        if r.pc == pc:
            expect.append((c >= 2) != r.taken)
            c = min(c + 1, 3) if r.taken else max(c - 1, 0)
    got = [r.mispred for r in retained(d) if r.pc == pc]
    assert got == expect
    assert sum(expect) >= len(expect) // 2

    # every mispredicted branch is followed by wrong-path records
    for k, r in enumerate(d):
        if r.retained and r.mispred:
            assert d[k + 1].squashed


def test_cold_load_goes_to_memory():
    p = prog(I("add", 1, (0,), imm=64), I("load", 2, (1,), imm=0))
    u = UARCH_A
    d = run_detailed(p, u, 100)
    ld = [r for r in d if r.op == "load"][0]
    assert ld.dlevel == "MEM"
    assert ld.complete_clock - ld.fetch_clock >= u.mem_latency


@given(seed=st.integers(0, 10_000), profile=st.sampled_from(PROFILES), u=st.sampled_from(UARCHS))
def test_retained_sequence_equals_functional(seed, profile, u):
    p = generate_program(seed, profile, 60)
    f = run_functional(p, 1500)
    d = run_detailed(p, u, 1500)
    assert [r.key() for r in retained(d)] == [r.key() for r in f]


@given(seed=st.integers(0, 10_000), profile=st.sampled_from(PROFILES), u=st.sampled_from(UARCHS))
def test_clock_monotonicity(seed, profile, u):
    d = run_detailed(generate_program(seed, profile, 60), u, 1500)
    for a, b in zip(d, d[1:]):
        assert b.fetch_clock >= a.fetch_clock
    for r in d:
        assert r.complete_clock >= r.fetch_clock + r.fetch_lat


@given(seed=st.integers(0, 10_000), profile=st.sampled_from(PROFILES))
def test_detailed_deterministic(seed, profile):
    p = generate_program(seed, profile, 50)
    a = [r.to_json() for r in run_detailed(p, UARCH_A, 1000)]
    b = [r.to_json() for r in run_detailed(p, UARCH_A, 1000)]
    assert a == b


@given(seed=st.integers(0, 10_000), profile=st.sampled_from(["memory", "mixed"]),
       lines=st.sampled_from([4, 8, 16]))
def test_fully_associative_l1d_misses_monotone_in_size(seed, profile, lines):
    p = generate_program(seed, profile, 80)

    def misses(n_lines):
        l1d = CacheConfig(32 * n_lines, n_lines)     # one set: fully associative
        u = MicroArchConfig(l1d=l1d, l1i=CacheConfig(1024, 2), l2=CacheConfig(65536, 4))
        return stats(run_detailed(p, u, 2000)).l1d_misses

    assert misses(2 * lines) <= misses(lines)


# metrics

def _rec(pc, **kw):
    base = dict(pc=pc, op="add", dst=1, srcs=(0,), mem_addr=None, taken=None,
                fetch_clock=pc, fetch_lat=1, complete_clock=pc + 2)
    base.update(kw)
    return DetailedRecord(**base)


def test_mpki_formula():
    tr = [_rec(4 * k) for k in range(2000)]
    for k in range(5):
        tr[k * 100] = _rec(4 * k * 100, op="load", mem_addr=64, dlevel="L2")
    m = stats(tr)
    assert m.l1d_mpki == pytest.approx(2.5)
    assert m.branch_mpki == 0.0
    assert m.cpi == m.total_cycles / m.instruction_count


def test_metrics_match_independent_recount(tmp_path):
    p = generate_program(9, "mixed", 150)
    d = run_detailed(p, UARCH_A, 5000)
    path = tmp_path / "t.jsonl"
    save_trace(path, d, {"note": "x"})

    n = l1 = l2 = mp = br = 0
    last = 0
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            if "_header" in row or row["squashed"] or row["nop"]:
                continue
            n += 1
            last = row["complete_clock"]
            l1 += row["dlevel"] in ("L2", "MEM")
            l2 += row["dlevel"] == "MEM"
            br += row["taken"] is not None
            mp += bool(row["mispred"])
    m = stats(d)
    assert (m.instruction_count, m.total_cycles) == (n, last)
    assert m.l1d_mpki == pytest.approx(1000 * l1 / n)
    assert m.l2_mpki == pytest.approx(1000 * l2 / n)
    assert m.branch_mpki == pytest.approx(1000 * mp / n)
    assert m.mispredict_rate == pytest.approx(mp / br)


def test_trace_round_trip(tmp_path):
    d = run_detailed(generate_program(2, "branchy", 80), UARCH_A, 800)
    save_trace(tmp_path / "d.jsonl", d, {"k": 1})
    back, header = load_trace(tmp_path / "d.jsonl")
    assert header == {"k": 1}
    assert back == d


# programs

def test_program_generation_deterministic():
    assert generate_program(1, "mixed", 100) == generate_program(1, "mixed", 100)


def test_branchy_profile_branch_fraction():
    p = generate_program(2, "branchy", 200)
    cond = sum(i.op.value in ("branch_eq", "branch_ne") for i in p.instructions)
    assert cond / len(p) >= 0.25


def test_memory_profile_address_fraction():
    f = run_functional(generate_program(3, "memory", 500), 10_000)
    assert sum(r.mem_addr is not None for r in f) / len(f) >= 0.40


def test_program_json_round_trip():
    p = generate_program(4, "mixed", 120)
    from tao.refsim import Program
    assert Program.from_json(json.loads(json.dumps(p.to_json()))) == p


# configuration

@pytest.mark.parametrize("bad", [
    dict(fetch_width=0), dict(fetch_width=9), dict(rob_size=200),
    dict(l1d=CacheConfig(1000, 2)), dict(l1_latency=20),
    dict(l1d=CacheConfig(65536, 4)),
])
def test_config_invariants_rejected(bad):
    with pytest.raises(InvalidConfig):
        MicroArchConfig(**bad).validate()


def test_with_param_and_grid():
    u = UARCH_A.with_param("l1d.size", 4096)
    assert u.l1d.size_bytes == 4096 and u.l1d.associativity == UARCH_A.l1d.associativity
    assert UARCH_A.with_param("branch_predictor", "GShare").branch_predictor is Predictor.GSHARE
    with pytest.raises(InvalidConfig):
        UARCH_A.with_param("l1d.colour", 1)
    size = 1
    for v in DESIGN_SPACE.values():
        size *= len(v)
    assert grid_size() == size


def test_config_json_round_trip():
    for u in UARCHS:
        assert MicroArchConfig.from_json(json.loads(json.dumps(u.to_json()))) == u
