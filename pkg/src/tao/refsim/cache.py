"""Set-associative LRU caches and a two-level hierarchy."""

from __future__ import annotations

from .config import CacheConfig

L1, L2, MEM = "L1", "L2", "MEM"


class Cache:
    """LRU set-associative cache tracking tags only."""

    def __init__(self, cfg: CacheConfig):
        self.cfg = cfg
        self.line_shift = cfg.line_bytes.bit_length() - 1
        self.set_mask = cfg.num_sets - 1
        self.ways = cfg.associativity
        self.sets: list[list[int]] = [[] for _ in range(cfg.num_sets)]
        self.hits = 0
        self.misses = 0

    def access(self, addr: int) -> bool:
        """Touch ``addr``; returns True on hit. Misses allocate the line."""
        line = addr >> self.line_shift
        s = self.sets[line & self.set_mask]
        if line in s:
            # most-recently-used lives at the end
            if s[-1] != line:
                s.remove(line)
                s.append(line)
            self.hits += 1
            return True
        if len(s) >= self.ways:
            del s[0]
        s.append(line)
        self.misses += 1
        return False


class Hierarchy:
    """Split L1 instruction/data caches backed by a unified L2."""

    def __init__(self, l1i: CacheConfig, l1d: CacheConfig, l2: CacheConfig):
        self.l1i = Cache(l1i)
        self.l1d = Cache(l1d)
        self.l2 = Cache(l2)

    def data(self, addr: int) -> str:
        if self.l1d.access(addr):
            return L1
        return L2 if self.l2.access(addr) else MEM

    def inst(self, addr: int) -> str:
        if self.l1i.access(addr):
            return L1
        return L2 if self.l2.access(addr) else MEM
