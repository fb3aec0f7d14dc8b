"""Real-multiplication counting for the detectors.

Detectors call :func:`tally` at each arithmetic stage with the number of
complex (or real) multiplies performed. Counting is off unless a
:class:`MulCounter` is active, so the calls cost one global lookup.

Convention: one complex multiply = 4 real multiplies. A complex-by-real
multiply counts 2.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager

_active: list = []


class MulCounter:
    def __init__(self):
        self.by_stage = Counter()

    @property
    def total(self) -> int:
        return int(sum(self.by_stage.values()))

    def add(self, stage: str, real_mults: int) -> None:
        self.by_stage[stage] += int(real_mults)


def tally(stage: str, complex_mults=0, real_mults=0, complex_real=0) -> None:
    if _active:
        n = 4 * int(complex_mults) + int(real_mults) + 2 * int(complex_real)
        for c in _active:
            c.add(stage, n)


@contextmanager
def counting():
    c = MulCounter()
    _active.append(c)
    try:
        yield c
    finally:
        _active.remove(c)


# cost helpers in complex multiplies
def matmul_cost(m: int, k: int, n: int) -> int:
    return m * k * n


def gram_cost(phi: int, omega: int) -> int:
    # Hermitian: only the upper triangle is formed
    return phi * omega * (omega + 1) // 2


def cholesky_cost(n: int) -> int:
    return n ** 3 // 6


def inverse_cost(n: int) -> int:
    # Cholesky factor plus inversion of the triangular factor and product
    return n ** 3 // 2
