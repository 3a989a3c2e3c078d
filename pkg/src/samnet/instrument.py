"""Counters for FLOPs, instrumented allocations, and recurrent-step counts.

A :class:`Meter` is installed as a context manager; while active, every
kernel reports the FLOPs it performs and the bytes of each array it
materializes. Allocation accounting is deliberately an allocator counter,
not process RSS: within one metered forward pass all intermediates are
considered live (the reverse pass needs them), so the live counter is
monotone and its peak is deterministic and hardware-independent.
"""
from __future__ import annotations

import threading

from .errors import MemoryBudgetExceeded

_TLS = threading.local()


def current_meter() -> "Meter | None":
    return getattr(_TLS, "meter", None)


class Meter:
    """Accumulates flops / allocated bytes / GRU step count for a scope.

    ``budget_bytes``, when set, turns the meter into a guard: reserving or
    allocating past the budget raises :class:`MemoryBudgetExceeded` so a
    quadratic-memory code path fails cleanly instead of exhausting RAM.
    """

    def __init__(self, budget_bytes: int | None = None):
        self.flops = 0
        self.live_bytes = 0
        self.peak_bytes = 0
        self.gru_steps = 0
        self.budget_bytes = budget_bytes
        self._prev = None

    def add_flops(self, n: int) -> None:
        self.flops += int(n)

    def reserve(self, nbytes: int) -> None:
        """Check an allocation against the budget before it happens."""
        if self.budget_bytes is not None and self.live_bytes + nbytes > self.budget_bytes:
            raise MemoryBudgetExceeded(
                f"allocation of {nbytes} bytes would exceed budget "
                f"({self.live_bytes} live of {self.budget_bytes})"
            )

    def alloc(self, nbytes: int) -> None:
        self.reserve(nbytes)
        self.live_bytes += int(nbytes)
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def count_gru_step(self) -> None:
        self.gru_steps += 1

    def __enter__(self) -> "Meter":
        self._prev = getattr(_TLS, "meter", None)
        _TLS.meter = self
        return self

    def __exit__(self, *exc) -> bool:
        _TLS.meter = self._prev
        return False
