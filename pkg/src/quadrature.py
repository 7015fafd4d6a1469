"""Gauss-Legendre rules and piecewise integration over knot spans."""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from src.errors import ConfigurationError, IntegrationError

MAX_POINTS = 64


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights on [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.nodes)

    def mapped(self, lower, upper) -> Tuple[np.ndarray, np.ndarray]:
        """
        Map the rule onto one or many intervals.

        Args:
            lower: Scalar or array of left endpoints.
            upper: Same shape as `lower`.

        Returns:
            (nodes, weights), each of shape lower.shape + (n_points,). Empty
            intervals get weight zero.
        """
        lower = np.asarray(lower, dtype=float)[..., None]
        upper = np.asarray(upper, dtype=float)[..., None]
        half = 0.5 * (upper - lower)
        nodes = lower + half * (self.nodes + 1.0)
        weights = half * self.weights
        return nodes, weights


@lru_cache(maxsize=None)
def gauss_legendre(n_points: int) -> QuadratureRule:
    """
    Gauss-Legendre rule with `n_points` nodes, exact for degree <= 2n - 1.

    Rules are cached; the arrays are read-only.
    """
    if not isinstance(n_points, (int, np.integer)) or not 1 <= n_points <= MAX_POINTS:
        raise ConfigurationError(
            f'Gauss-Legendre rule needs 1 <= n_points <= {MAX_POINTS}, got {n_points!r}'
        )
    nodes, weights = leggauss(int(n_points))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


def segment_bounds(breakpoints: Sequence[float], lower: float, upper: float) -> np.ndarray:
    """Breakpoints strictly inside (lower, upper), with both limits added."""
    inner = np.asarray(breakpoints, dtype=float)
    inner = inner[(inner > lower) & (inner < upper)]
    return np.concatenate([[lower], inner, [upper]])


def integrate_piecewise(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints: Sequence[float],
    rule: QuadratureRule,
    lower: float,
    upper: float,
):
    """
    Integrate f over [lower, upper], one Gauss-Legendre rule per segment.

    Args:
        f: Vectorized integrand. Called once with all nodes (shape (m,)); may return
            shape (m,) or (m, ...) for vector- or matrix-valued integrands.
        breakpoints: Sorted points at which f may lose smoothness (e.g. knots).
        rule: Quadrature rule applied on every segment.
        lower: Lower limit.
        upper: Upper limit, >= lower.

    Returns:
        The integral; a float or an array of the integrand's trailing shape.
    """
    if not upper >= lower:
        raise ConfigurationError(f'integration limits out of order: [{lower}, {upper}]')
    if np.any(np.diff(np.asarray(breakpoints, dtype=float)) < 0):
        raise ConfigurationError('breakpoints must be sorted')
    if upper == lower:
        sample = np.asarray(f(np.array([lower], dtype=float)))
        return 0.0 if sample.ndim <= 1 else np.zeros(sample.shape[1:])

    bounds = segment_bounds(breakpoints, lower, upper)
    nodes, weights = rule.mapped(bounds[:-1], bounds[1:])
    values = np.asarray(f(nodes.ravel()))
    if np.any(np.isnan(values)):
        raise IntegrationError(f'integrand returned NaN on [{lower}, {upper}]')
    result = np.tensordot(weights.ravel(), values, axes=(0, 0))
    return float(result) if np.ndim(result) == 0 else result
