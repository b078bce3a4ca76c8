import os

import pytest
from hypothesis import HealthCheck, settings

from tao.refsim import UARCH_A, UARCH_B, UARCH_C
from tao.refsim.config import CacheConfig, MicroArchConfig, Predictor
from tao.refsim.isa import Instruction, Opcode, Program

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

UARCHS = (UARCH_A, UARCH_B, UARCH_C)


def prog(*ins, regs=None, data=()):
    r = tuple(regs) if regs is not None else (0,) * 16
    p = Program(tuple(ins), r, tuple(data))
    p.validate()
    return p


def I(op, dst=None, srcs=(), imm=0, target=None):
    return Instruction(Opcode(op), dst, tuple(srcs), imm, target)


@pytest.fixture
def perfect_uarch():
    # AlwaysTaken is perfect on a program with no conditional branches
    return MicroArchConfig(fetch_width=1, rob_size=32, branch_predictor=Predictor.ALWAYS_TAKEN,
                           l1d=CacheConfig(1024, 2), l1i=CacheConfig(512, 2), l2=CacheConfig(16384, 2))


_VERDICTS: dict = {}


def record_verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _VERDICTS[n] = line
    print(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models; minutes of runtime")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
