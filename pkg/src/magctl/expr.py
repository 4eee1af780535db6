"""Closed-form expression strings used by configs and the CLI.

Coordinates may be written ``x, y, z`` or ``x1, x2, x3``; ``r2`` is a
shorthand for ``|x|^2``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

AXIS_SYMBOLS = sp.symbols("x1 x2 x3", real=True)

_ALIASES = {"x": AXIS_SYMBOLS[0], "y": AXIS_SYMBOLS[1], "z": AXIS_SYMBOLS[2]}


def _locals(d: int) -> dict:
    names = {f"x{j + 1}": AXIS_SYMBOLS[j] for j in range(3)}
    names.update(_ALIASES)
    names["r2"] = sum(AXIS_SYMBOLS[j] ** 2 for j in range(d))
    names["pi"] = sp.pi
    names["E"] = sp.E
    return names


@lru_cache(maxsize=256)
def parse(text: str, d: int = 1) -> sp.Expr:
    """Parse ``text`` into a sympy expression in the first ``d`` axes."""
    expr = sp.sympify(text, locals=_locals(d))
    free = expr.free_symbols - set(AXIS_SYMBOLS[:d])
    if free:
        raise ValueError(f"unknown symbols {sorted(map(str, free))} in {text!r} (d={d})")
    return expr


def to_callable(expr, d: int):
    """Vectorised numpy function ``f(x1, ..., xd)`` for a sympy expression."""
    if isinstance(expr, str):
        expr = parse(expr, d)
    fn = sp.lambdify(AXIS_SYMBOLS[:d], expr, modules="numpy")

    def wrapped(*coords):
        out = fn(*coords)
        return np.broadcast_to(np.asarray(out, dtype=complex), coords[0].shape).copy()

    return wrapped


def gradient_exprs(expr, d: int) -> list[sp.Expr]:
    if isinstance(expr, str):
        expr = parse(expr, d)
    return [sp.diff(expr, AXIS_SYMBOLS[j]) for j in range(d)]


def divergence_expr(components, d: int) -> sp.Expr:
    comps = [parse(c, d) if isinstance(c, str) else c for c in components]
    return sp.simplify(sum(sp.diff(c, AXIS_SYMBOLS[j]) for j, c in enumerate(comps)))
