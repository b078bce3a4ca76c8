"""Conditional branch direction predictors.

All tables use 2-bit saturating counters initialised weakly taken; counter
values 2 and 3 predict taken.
"""

from __future__ import annotations

from .config import Predictor

TABLE_BITS = 10
HISTORY_BITS = 8


class AlwaysTaken:
    def predict(self, pc: int) -> bool:
        return True

    def update(self, pc: int, taken: bool) -> None:
        pass


class TwoBitLocal:
    def __init__(self, bits: int = TABLE_BITS):
        self.mask = (1 << bits) - 1
        self.counters = [2] * (1 << bits)

    def _index(self, pc: int) -> int:
        return (pc >> 2) & self.mask

    def predict(self, pc: int) -> bool:
        return self.counters[self._index(pc)] >= 2

    def update(self, pc: int, taken: bool) -> None:
        i = self._index(pc)
        c = self.counters[i]
        if taken:
            if c < 3:
                self.counters[i] = c + 1
        elif c > 0:
            self.counters[i] = c - 1


class GShare:
    def __init__(self, bits: int = TABLE_BITS, history_bits: int = HISTORY_BITS):
        self.mask = (1 << bits) - 1
        self.hmask = (1 << history_bits) - 1
        self.counters = [2] * (1 << bits)
        self.history = 0

    def _index(self, pc: int) -> int:
        return ((pc >> 2) ^ self.history) & self.mask

    def predict(self, pc: int) -> bool:
        return self.counters[self._index(pc)] >= 2

    def update(self, pc: int, taken: bool) -> None:
        i = self._index(pc)
        c = self.counters[i]
        if taken:
            if c < 3:
                self.counters[i] = c + 1
        elif c > 0:
            self.counters[i] = c - 1
        self.history = ((self.history << 1) | int(taken)) & self.hmask


class Tournament:
    """Per-PC chooser between a local and a gshare component."""

    def __init__(self, bits: int = TABLE_BITS):
        self.local = TwoBitLocal(bits)
        self.gshare = GShare(bits)
        self.mask = (1 << bits) - 1
        # 0,1 prefer local; 2,3 prefer gshare
        self.chooser = [2] * (1 << bits)

    def predict(self, pc: int) -> bool:
        if self.chooser[(pc >> 2) & self.mask] >= 2:
            return self.gshare.predict(pc)
        return self.local.predict(pc)

    def update(self, pc: int, taken: bool) -> None:
        lp = self.local.predict(pc)
        gp = self.gshare.predict(pc)
        if lp != gp:
            i = (pc >> 2) & self.mask
            c = self.chooser[i]
            if gp == taken:
                self.chooser[i] = min(3, c + 1)
            else:
                self.chooser[i] = max(0, c - 1)
        self.local.update(pc, taken)
        self.gshare.update(pc, taken)


def make_predictor(kind: Predictor):
    return {
        Predictor.ALWAYS_TAKEN: AlwaysTaken,
        Predictor.TWO_BIT_LOCAL: TwoBitLocal,
        Predictor.GSHARE: GShare,
        Predictor.TOURNAMENT: Tournament,
    }[Predictor(kind)]()
