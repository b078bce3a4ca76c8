import numpy as np
import pytest
from hypothesis import given, strategies as st

from tao.errors import UnalignedPC, UnknownOpcode, ValidationError
from tao.features import (
    FeatureSchema, FeatureState, access_distance, branch_bucket, branch_features, featurize_trace,
    update_branch, update_memory,
)
from tao.refsim import UARCH_A, UARCH_C, generate_program, retained, run_detailed, run_functional
from tao.refsim.trace import FunctionalRecord

BR = "branch_ne"


def br(pc, taken):
    return FunctionalRecord(pc, BR, None, (1, 2), None, taken)


def mem(addr, pc=0x40, op="load"):
    return FunctionalRecord(pc, op, 3 if op == "load" else None, (1,) if op == "load" else (1, 2), addr, None)


def alu(pc=0x10):
    return FunctionalRecord(pc, "add", 1, (2, 3), None, None)


# hashing

def test_bucket_hand_values():
    assert branch_bucket(0x00A0, 3) == 1
    assert branch_bucket(0x1234 * 4, 1) == 0
    assert branch_bucket(0x100, 7) == branch_bucket(0x100 + 4 * 7, 7)
    with pytest.raises(UnalignedPC):
        branch_bucket(0x102, 4)


def test_schema_validation():
    with pytest.raises(ValidationError):
        FeatureSchema(n_b=0)
    with pytest.raises(ValidationError):
        FeatureSchema(opcode_vocab={"add": 0, "sub": 2})
    s = FeatureSchema(n_q=4, n_m=8)
    assert FeatureSchema.from_json(s.to_json()) == s
    assert s.hash() != FeatureSchema(n_q=4, n_m=9).hash()


# branch history

def test_shared_bucket_reads_before_update():
    """00A0, 00A8, 00B4 then 00A0 again with three buckets of depth two."""
    schema = FeatureSchema(n_b=3, n_q=2)
    trace = [br(0x00A0, False), br(0x00A8, True), br(0x00B4, True), br(0x00A8, False), br(0x00A0, True)]
    tab = featurize_trace(trace, schema)
    assert tab.branch[-1].tolist() == [0, -1]
    assert tab.branch[0].tolist() == [-1, -1]
    # 00A8 and 00B4 share a bucket, holding their two most recent outcomes
    assert tab.branch[3].tolist() == [1, 1]


def test_empty_bucket_is_all_sentinel():
    st_ = FeatureState(FeatureSchema(n_q=5))
    assert branch_features(st_, 0x40) == [-1] * 5


def test_bucket_fifo_depth():
    st_ = FeatureState(FeatureSchema(n_b=4, n_q=2))
    for t in (True, False, True):
        update_branch(st_, 0x40, t)
    assert branch_features(st_, 0x40) == [0, 1]


def test_distinct_buckets_isolated_and_aliases_interleave():
    schema = FeatureSchema(n_b=8, n_q=4)
    st_ = FeatureState(schema)
    a, b, alias = 0x100, 0x104, 0x100 + 4 * 8
    update_branch(st_, a, True)
    update_branch(st_, b, False)
    update_branch(st_, alias, False)
    assert branch_features(st_, a) == [1, 0, -1, -1]
    assert branch_features(st_, alias) == branch_features(st_, a)
    assert branch_features(st_, b) == [0, -1, -1, -1]


def naive_branch(trace, n_b, n_q):
    hist = {}
    out = []
    for r in trace:
        if r.op in ("branch_eq", "branch_ne"):
            q = hist.setdefault((r.pc // 4) % n_b, [])
            last = q[-n_q:]
            out.append(last + [-1] * (n_q - len(last)))
            q.append(int(r.taken))
        else:
            out.append([-1] * n_q)
    return out


@given(n_b=st.integers(1, 9), n_q=st.integers(1, 6),
       events=st.lists(st.tuples(st.integers(0, 40), st.booleans(), st.booleans()), max_size=200))
def test_branch_history_matches_naive_replay(n_b, n_q, events):
    trace = [br(4 * pc, t) if is_br else alu(4 * pc) for pc, t, is_br in events]
    tab = featurize_trace(trace, FeatureSchema(n_b=n_b, n_q=n_q))
    assert tab.branch.tolist() == naive_branch(trace, n_b, n_q)


@given(events=st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=1, max_size=100))
def test_branch_feature_never_sees_own_outcome(events):
    trace = [br(4 * pc, t) for pc, t in events]
    flipped = trace[:-1] + [br(trace[-1].pc, not trace[-1].taken)]
    s = FeatureSchema(n_b=4, n_q=3)
    assert np.array_equal(featurize_trace(trace, s).branch[-1], featurize_trace(flipped, s).branch[-1])


def test_branch_history_hundred_thousand():
    rng = np.random.default_rng(0)
    n = 100_000
    pcs = rng.integers(0, 512, n) * 4
    takens = rng.random(n) < 0.6
    trace = [br(int(p), bool(t)) for p, t in zip(pcs, takens)]
    tab = featurize_trace(trace, FeatureSchema(n_b=64, n_q=8))
    assert tab.branch.tolist() == naive_branch(trace, 64, 8)


# access distance

def test_access_distance_worked_example():
    st_ = FeatureState(FeatureSchema(n_m=4))
    assert access_distance(st_, 463408) == [0, 0, 0, 0]
    update_memory(st_, 463408)
    assert access_distance(st_, 463412) == [4, 0, 0, 0]

    tab = featurize_trace([mem(463408), alu(), mem(463412)], FeatureSchema(n_m=4))
    assert tab.dist[0].tolist() == [0, 0, 0, 0]
    assert tab.dist[2].tolist() == [4, 0, 0, 0]
    assert tab.dist[1].tolist() == [0, 0, 0, 0]


def test_repeated_address_zero_leading():
    tab = featurize_trace([mem(800)] * 5, FeatureSchema(n_m=3))
    assert tab.dist[-1].tolist() == [0, 0, 0]


def naive_distances(addrs, n_m):
    out = []
    for i, a in enumerate(addrs):
        prev = addrs[max(0, i - n_m):i][::-1]
        row = [a - p for p in prev]
        out.append(row + [0] * (n_m - len(row)))
    return out


@given(n_m=st.integers(1, 8), addrs=st.lists(st.integers(0, 1 << 20), max_size=120))
def test_access_distance_matches_history(n_m, addrs):
    tab = featurize_trace([mem(a) for a in addrs], FeatureSchema(n_m=n_m))
    assert tab.dist.tolist() == naive_distances(addrs, n_m)


def test_access_distance_hundred_thousand():
    rng = np.random.default_rng(1)
    addrs = (rng.integers(0, 1 << 16, 100_000) * 8).tolist()
    tab = featurize_trace([mem(a) for a in addrs], FeatureSchema(n_m=8))
    assert tab.dist.tolist() == naive_distances(addrs, 8)


# whole traces

def test_empty_and_plain_traces():
    s = FeatureSchema(n_q=3, n_m=2)
    assert len(featurize_trace([], s)) == 0
    tab = featurize_trace([alu(4 * k) for k in range(5)], s)
    assert (tab.branch == -1).all() and (tab.dist == 0).all()


def test_unknown_opcode():
    with pytest.raises(UnknownOpcode):
        featurize_trace([FunctionalRecord(0, "fdiv", 1, (), None, None)], FeatureSchema())


def test_compositional_oracle():
    schema = FeatureSchema(n_b=16, n_q=4, n_m=6)
    f = run_functional(generate_program(6, "mixed", 150), 3000)
    tab = featurize_trace(f, schema)
    st_ = FeatureState(schema)
    for i, r in enumerate(f):
        if r.op in ("branch_eq", "branch_ne"):
            assert tab.branch[i].tolist() == branch_features(st_, r.pc)
            update_branch(st_, r.pc, r.taken)
        if r.mem_addr is not None:
            assert tab.dist[i].tolist() == access_distance(st_, r.mem_addr)
            update_memory(st_, r.mem_addr)
        vec = tab[i]
        assert vec.opcode_id == schema.opcode_vocab[r.op]
        assert set(np.flatnonzero(vec.register_bitmap)) == set(r.srcs) | ({r.dst} - {None})


def test_state_snapshot_continues_replay():
    schema = FeatureSchema(n_b=16, n_q=4, n_m=6)
    f = run_functional(generate_program(7, "branchy", 120), 2000)
    whole = featurize_trace(f, schema)
    head, st_ = featurize_trace(f[:700], schema, return_state=True)
    tail = featurize_trace(f[700:], schema, state=st_)
    for col in ("opcode", "regs", "branch", "dist", "flags"):
        assert np.array_equal(getattr(whole, col)[700:], getattr(tail, col))
    # the snapshot is copied, not consumed
    assert np.array_equal(featurize_trace(f[700:], schema, state=st_).dist, tail.dist)


def test_features_independent_of_uarch():
    schema = FeatureSchema(n_b=32, n_q=4, n_m=8)
    p = generate_program(9, "mixed", 100)
    a = featurize_trace(retained(run_detailed(p, UARCH_A, 2000)), schema)
    c = featurize_trace(retained(run_detailed(p, UARCH_C, 2000)), schema)
    f = featurize_trace(run_functional(p, 2000), schema)
    for col in ("opcode", "regs", "branch", "dist", "flags"):
        assert np.array_equal(getattr(a, col), getattr(c, col))
        assert np.array_equal(getattr(a, col), getattr(f, col))


def test_fixed_dimensions():
    schema = FeatureSchema(n_b=8, n_q=5, n_m=7)
    tab = featurize_trace(run_functional(generate_program(2, "memory", 60), 500), schema)
    assert tab.dense().shape == (500, schema.dense_dim)
    assert tab.branch.shape == (500, 5) and tab.dist.shape == (500, 7)
