"""Clamped B-spline sieve spaces for the log-hazard function."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BSpline

from src.errors import (
    ConfigurationError,
    KnotPlacementError,
    OutOfDomainError,
    UnsupportedDerivativeError,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMA_BOUND = 50.0

# Points this close to [a, b] are clamped onto it instead of rejected.
ENDPOINT_SLACK = 1e-12

PLACEMENTS = ('equal', 'quantile')


@dataclass(frozen=True)
class KnotVector:
    """Interior partition points of [a, b] together with the spline order."""

    interior_knots: Tuple[float, ...]
    boundary: Tuple[float, float]
    order: int

    def __post_init__(self):
        a, b = self.boundary
        if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
            raise KnotPlacementError(f'degenerate interval [{a}, {b}]')
        if self.order < 1:
            raise KnotPlacementError(f'spline order must be >= 1, got {self.order}')
        points = (a,) + tuple(self.interior_knots) + (b,)
        if any(right <= left for left, right in zip(points, points[1:])):
            raise KnotPlacementError(
                f'interior knots must be strictly increasing inside ({a}, {b}): {self.interior_knots}'
            )

    @property
    def n_interior(self) -> int:
        return len(self.interior_knots)

    @property
    def breakpoints(self) -> np.ndarray:
        """a, the interior knots and b, in increasing order."""
        a, b = self.boundary
        return np.array((a,) + tuple(self.interior_knots) + (b,), dtype=float)

    @property
    def extended(self) -> np.ndarray:
        """Clamped knot sequence: each boundary repeated `order` times."""
        a, b = self.boundary
        return np.concatenate([
            np.full(self.order, a, dtype=float),
            np.asarray(self.interior_knots, dtype=float),
            np.full(self.order, b, dtype=float),
        ])


def build_knots(
    interval: Tuple[float, float],
    n_interior: int,
    order: int,
    placement: str = 'equal',
    residuals: Optional[Sequence[float]] = None,
) -> KnotVector:
    """
    Place interior knots on [a, b].

    Args:
        interval: The boundary (a, b).
        n_interior: Number of interior knots K_n.
        order: Spline order p.
        placement: 'equal' for t_j = a + j(b - a)/(K_n + 1), 'quantile' for the
            j/(K_n + 1) quantiles of `residuals`.
        residuals: Residuals used by quantile placement.

    Returns:
        A validated KnotVector.
    """
    a, b = float(interval[0]), float(interval[1])
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise KnotPlacementError(f'degenerate interval [{a}, {b}]')
    if n_interior < 0:
        raise KnotPlacementError(f'n_interior must be >= 0, got {n_interior}')
    if placement not in PLACEMENTS:
        raise KnotPlacementError(f'unknown knot placement {placement!r}')

    if n_interior == 0:
        return KnotVector((), (a, b), order)

    if placement == 'equal':
        steps = np.arange(1, n_interior + 1) / (n_interior + 1)
        knots = a + steps * (b - a)
        return KnotVector(tuple(float(k) for k in knots), (a, b), order)

    values = np.asarray(residuals if residuals is not None else [], dtype=float)
    if values.size == 0:
        raise KnotPlacementError('quantile placement needs a nonempty residual sample')
    levels = np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.quantile(values, levels)

    # Ties and boundary hits are pushed up by epsilon; anything still invalid is an error.
    eps = 1e-8 * (b - a)
    previous = a
    shifted = []
    n_moved = 0
    for knot in knots:
        knot = float(knot)
        if knot <= previous:
            knot = previous + eps
            n_moved += 1
        shifted.append(knot)
        previous = knot
    if shifted[-1] >= b:
        raise KnotPlacementError(
            f'residual quantiles collapse onto the upper boundary {b}: {shifted}'
        )
    if n_moved:
        logger.warning('Shifted %d duplicate residual quantile knot(s) by %.3g', n_moved, eps)
    return KnotVector(tuple(shifted), (a, b), order)


class SplineBasis:
    """
    The B-spline basis {B_j, 1 <= j <= q} of the clamped knot vector.

    q = K_n + p. Instances are immutable after construction.
    """

    __slots__ = ('knots', '_spline')

    def __init__(self, knots: KnotVector):
        object.__setattr__(self, 'knots', knots)
        q = knots.n_interior + knots.order
        # One BSpline with an identity coefficient matrix evaluates every B_j at once.
        spline = BSpline(knots.extended, np.eye(q), knots.order - 1, extrapolate=True)
        object.__setattr__(self, '_spline', spline)

    def __setattr__(self, name, value):
        raise AttributeError('SplineBasis is immutable')

    def __reduce__(self):
        return (SplineBasis, (self.knots,))

    def __repr__(self) -> str:
        a, b = self.knots.boundary
        return f'SplineBasis(order={self.order}, q={self.q}, interval=({a:.6g}, {b:.6g}))'

    @property
    def order(self) -> int:
        return self.knots.order

    @property
    def q(self) -> int:
        return self.knots.n_interior + self.knots.order

    @property
    def lower(self) -> float:
        return self.knots.boundary[0]

    @property
    def upper(self) -> float:
        return self.knots.boundary[1]

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots.breakpoints

    def greville(self) -> np.ndarray:
        """Greville abscissae; coefficients equal to them reproduce t -> t."""
        t = self.knots.extended
        p = self.order
        if p == 1:
            return 0.5 * (t[:-1] + t[1:])
        return np.array([t[j + 1:j + p].mean() for j in range(self.q)])

    def _check_derivative(self, deriv: int):
        if deriv < 0 or deriv >= self.order:
            raise UnsupportedDerivativeError(
                f'derivative order {deriv} not available for spline order {self.order}'
            )

    def design(self, t, deriv: int = 0) -> np.ndarray:
        """
        Evaluate all basis functions (or a derivative) at points inside [a, b].

        Args:
            t: Scalar or array of evaluation points.
            deriv: Derivative order, 0 <= deriv < p.

        Returns:
            Array of shape (len(t), q).
        """
        self._check_derivative(deriv)
        points = np.atleast_1d(np.asarray(t, dtype=float))
        slack = ENDPOINT_SLACK * max(1.0, self.upper - self.lower)
        outside = (points < self.lower - slack) | (points > self.upper + slack) | ~np.isfinite(points)
        if np.any(outside):
            bad = points[outside][0]
            raise OutOfDomainError(
                f'spline evaluated at {bad!r}, outside [{self.lower}, {self.upper}]'
            )
        points = np.clip(points, self.lower, self.upper)
        return self._spline(points, nu=deriv)

    def design_extended(self, s, deriv: int = 0) -> np.ndarray:
        """
        Evaluate the basis with linear continuation outside [a, b].

        Outside the interval every B_j continues along its tangent at the nearest
        endpoint, so the second derivative is zero there.
        """
        self._check_derivative(deriv)
        points = np.atleast_1d(np.asarray(s, dtype=float))
        nearest = np.clip(points, self.lower, self.upper)
        offset = (points - nearest)[:, None]
        if deriv == 0:
            values = self._spline(nearest, nu=0)
            if self.order > 1:
                values = values + offset * self._spline(nearest, nu=1)
            return values
        values = self._spline(nearest, nu=deriv)
        if deriv >= 2:
            values = np.where(offset != 0.0, 0.0, values)
        return values


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """All q basis values at a single point t in [a, b]."""
    return basis.design(t)[0]


def eval_basis_deriv(basis: SplineBasis, t: float, deriv_order: int = 1) -> np.ndarray:
    """Derivative of order `deriv_order` of all q basis functions at t."""
    if deriv_order < 1:
        raise UnsupportedDerivativeError(f'deriv_order must be >= 1, got {deriv_order}')
    return basis.design(t, deriv=deriv_order)[0]


@dataclass(frozen=True, eq=False)
class SplineFunction:
    """s(t) = sum_j gamma_j B_j(t)."""

    basis: SplineBasis
    gamma: np.ndarray
    gamma_bound: float = field(default=DEFAULT_GAMMA_BOUND)

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        if gamma.size != self.basis.q:
            raise ConfigurationError(
                f'gamma has {gamma.size} coefficients but the basis has q={self.basis.q}'
            )
        if not np.all(np.isfinite(gamma)):
            raise ConfigurationError('gamma contains non-finite coefficients')
        if np.max(np.abs(gamma)) > self.gamma_bound:
            raise ConfigurationError(
                f'max |gamma_j| = {np.max(np.abs(gamma)):.6g} exceeds the bound {self.gamma_bound}'
            )
        gamma.setflags(write=False)
        object.__setattr__(self, 'gamma', gamma)

    def values(self, t, deriv: int = 0) -> np.ndarray:
        return self.basis.design(t, deriv) @ self.gamma

    def values_extended(self, s, deriv: int = 0) -> np.ndarray:
        return self.basis.design_extended(s, deriv) @ self.gamma


def eval_spline(f: SplineFunction, t: float) -> float:
    return float(eval_basis(f.basis, t) @ f.gamma)


def eval_spline_deriv(f: SplineFunction, t: float, deriv_order: int = 1) -> float:
    return float(eval_basis_deriv(f.basis, t, deriv_order) @ f.gamma)
