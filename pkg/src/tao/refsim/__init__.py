"""Toy out-of-order reference core producing functional and detailed traces."""

from .config import (
    DESIGN_SPACE, UARCH_A, UARCH_B, UARCH_C, CacheConfig, MicroArchConfig, Predictor,
    config_from_point, grid_points, grid_size,
)
from .core import PerfMetrics, retained, run_detailed, run_functional, stats
from .isa import Instruction, Opcode, Program
from .programs import Profile, generate_program
from .trace import DetailedRecord, FunctionalRecord, load_trace, read_jsonl, save_trace, write_jsonl
