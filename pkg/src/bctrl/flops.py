"""Explicit floating point operation counters.

Kernels call :func:`add` with a category and a count. Counting is off
unless a :func:`track` context is active, so the hot loops pay one
attribute lookup when nobody is listening.
"""

from __future__ import annotations

import contextlib
from collections import Counter

_active: list[Counter] = []


def add(category: str, count: int | float) -> None:
    for c in _active:
        c[category] += int(count)


@contextlib.contextmanager
def track():
    """Collect FLOPs by category for the duration of the block."""
    counts: Counter = Counter()
    _active.append(counts)
    try:
        yield counts
    finally:
        _active.remove(counts)
