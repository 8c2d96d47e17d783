"""Associative, commutative value combiners."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable


@dataclass(frozen=True)
class Reducer:
    """Binary combine applied whenever two values meet under one key.

    ``op`` names a combine the compiled backend can run natively
    (``"sum"`` or ``"max"``); custom reducers leave it ``None`` and only
    work with the pure-Python backend.
    """

    combine: Callable[[Any, Any], Any]
    op: str | None = None

    def __call__(self, a: Any, b: Any) -> Any:
        return self.combine(a, b)


def _add(a, b):
    return a + b


SUM = Reducer(_add, "sum")
MAX = Reducer(max, "max")


def reducer_sum() -> Reducer:
    return SUM


def reducer_max() -> Reducer:
    return MAX
