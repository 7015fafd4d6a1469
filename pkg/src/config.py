"""Fit configuration and worker-count resolution."""

import os
from dataclasses import asdict, dataclass
from typing import Dict, Optional

from src.errors import ConfigurationError

THREADS_ENV_VAR = 'AFT_SIEVE_THREADS'

KNOT_PLACEMENTS = ('equal', 'quantile')


@dataclass(frozen=True)
class FitConfig:
    """
    Settings of one sieve maximum likelihood fit.

    Attributes:
        order: Spline order p (4 = cubic). Must be at least 3 so the log-hazard has
            a second derivative for the Hessian.
        n_interior_knots: Number of interior knots K_n.
        tol: Stopping tolerance on both the parameter change and the score.
        max_iter: Newton iteration cap.
        step_halving_max: Maximum number of halvings of a rejected step.
        ridge_eps: Initial ridge added to -H when it is not positive definite.
        quad_points: Gauss-Legendre points per integration segment.
        knot_placement: 'equal' or 'quantile' (quantiles of the starting residuals).
        gamma_bound: Cap on |gamma_j|.
        domain_margin: Fraction of the residual range added on each side of [a, b].
        extrapolation_warn_fraction: Fitted fraction of residuals outside [a, b]
            above which the fit is flagged.
    """

    order: int = 4
    n_interior_knots: int = 1
    tol: float = 1e-5
    max_iter: int = 200
    step_halving_max: int = 30
    ridge_eps: float = 1e-8
    quad_points: int = 10
    knot_placement: str = 'equal'
    gamma_bound: float = 50.0
    domain_margin: float = 0.05
    extrapolation_warn_fraction: float = 0.01

    def __post_init__(self):
        if self.order < 3:
            raise ConfigurationError(f'spline order must be >= 3, got {self.order}')
        if self.n_interior_knots < 0:
            raise ConfigurationError(f'n_interior_knots must be >= 0, got {self.n_interior_knots}')
        if not self.tol > 0:
            raise ConfigurationError(f'tol must be positive, got {self.tol}')
        if self.max_iter < 1:
            raise ConfigurationError(f'max_iter must be >= 1, got {self.max_iter}')
        if self.step_halving_max < 0:
            raise ConfigurationError(f'step_halving_max must be >= 0, got {self.step_halving_max}')
        if not self.ridge_eps > 0:
            raise ConfigurationError(f'ridge_eps must be positive, got {self.ridge_eps}')
        if not 1 <= self.quad_points <= 64:
            raise ConfigurationError(f'quad_points must be in [1, 64], got {self.quad_points}')
        if self.knot_placement not in KNOT_PLACEMENTS:
            raise ConfigurationError(
                f'knot_placement must be one of {KNOT_PLACEMENTS}, got {self.knot_placement!r}'
            )
        if not self.gamma_bound > 0:
            raise ConfigurationError(f'gamma_bound must be positive, got {self.gamma_bound}')
        if not self.domain_margin >= 0:
            raise ConfigurationError(f'domain_margin must be >= 0, got {self.domain_margin}')

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def knots_for_sample_size(n: int) -> int:
    """Interior knot count used by the simulation study: 1 up to n=400, 2 above."""
    return 1 if n <= 400 else 2


def worker_count(requested: Optional[int] = None) -> int:
    """
    Resolve how many worker processes may be used.

    Args:
        requested: Explicit count; wins over the environment when given.

    Returns:
        A positive worker count.
    """
    if requested is not None:
        if requested < 1:
            raise ConfigurationError(f'worker count must be >= 1, got {requested}')
        return requested

    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == '':
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f'{THREADS_ENV_VAR} must be an integer, got {raw!r}') from None
    if value < 1:
        raise ConfigurationError(f'{THREADS_ENV_VAR} must be >= 1, got {value}')
    return value
