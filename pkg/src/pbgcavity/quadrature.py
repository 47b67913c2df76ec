"""Composite Gauss rules on graded panels."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def legendre_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def jacobi_rule(order: int, beta: float):
    """Nodes on [0, 1] and weights for ``int_0^1 s**beta f(s) ds``."""
    x, w = roots_jacobi(order, 0.0, beta)
    s = 0.5 * (x + 1.0)
    w = w * 0.5 ** (beta + 1.0)
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def graded_edges(a: float, b: float, width, max_panels: int = 2_000_000) -> np.ndarray:
    """Panel edges on [a, b] whose widths follow ``width(x)``.

    ``width`` is evaluated at both ends of a trial panel so that shrinking
    width functions are respected.
    """
    edges = [a]
    x = a
    while x < b:
        h = width(x)
        h = min(h, width(min(x + h, b)))
        if not h > 0:
            raise ValueError(f"non-positive panel width at x={x}")
        x = min(x + h, b)
        if b - x < 1e-3 * h:
            x = b
        edges.append(x)
        if len(edges) > max_panels:
            raise ValueError("panel budget exceeded")
    return np.asarray(edges)


def panel_rule(edges: np.ndarray, order: int):
    """Gauss-Legendre nodes and weights on every panel of ``edges``."""
    x, w = legendre_rule(order)
    left = edges[:-1, None]
    half = 0.5 * np.diff(edges)[:, None]
    nodes = left + half * (x + 1.0)
    weights = half * w
    return nodes.ravel(), weights.ravel()
