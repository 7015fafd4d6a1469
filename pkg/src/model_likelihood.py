"""Sieve log-likelihood of the censored linear model, with analytic derivatives.

For theta = (beta, gamma) and residuals e_i = y_i - x_i'beta the average log-likelihood is

    l_n = n^-1 sum_i [ delta_i g(e_i) - int_a^{e_i} exp(g(s)) ds ],   g = sum_j gamma_j B_j,

after the change of variable s = t - x_i'beta. g continues linearly outside the basis
interval [a, b]; mass below a is zero. Value, score and Hessian of one evaluation are
computed from a single set of quadrature nodes.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from src.errors import DataValidationError, DomainViolationError, IntegrationError
from src.quadrature import QuadratureRule
from src.spline_basis import DEFAULT_GAMMA_BOUND, SplineBasis, SplineFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    """One subject: follow-up y = min(T, C) on the regression scale, event flag, covariates."""

    y: float
    delta: int
    x: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Right-censored sample stored column-wise.

    Attributes:
        y: Follow-up times, shape (n,).
        delta: Event indicators in {0, 1}, shape (n,).
        x: Covariates, shape (n, d).
        names: Covariate names, length d.
    """

    y: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        raw_delta = np.asarray(self.delta).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size or raw_delta.size != y.size:
            raise DataValidationError(
                f'inconsistent shapes: y {y.shape}, delta {raw_delta.shape}, x {x.shape}'
            )
        if y.size == 0:
            raise DataValidationError('dataset is empty')
        if x.shape[1] == 0:
            raise DataValidationError('at least one covariate is required')
        for i in range(y.size):
            if raw_delta[i] not in (0, 1):
                raise DataValidationError(f'status must be 0 or 1, got {raw_delta[i]!r}', row=i)
            if not np.isfinite(y[i]):
                raise DataValidationError('follow-up time is not finite', row=i)
            if not np.all(np.isfinite(x[i])):
                raise DataValidationError('covariate is not finite', row=i)
        delta = raw_delta.astype(np.int64)
        if delta.sum() == 0:
            raise DataValidationError('no events observed (every status is 0)')

        names = tuple(self.names) or tuple(f'x{k + 1}' for k in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataValidationError(f'{len(names)} names given for {x.shape[1]} covariates')
        for arr in (y, delta, x):
            arr.setflags(write=False)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'delta', delta)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'names', names)

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], names: Sequence[str] = ()) -> 'Dataset':
        observations = list(observations)
        if not observations:
            raise DataValidationError('dataset is empty')
        dims = {len(obs.x) for obs in observations}
        if len(dims) != 1:
            raise DataValidationError(f'observations have mixed covariate dimensions {sorted(dims)}')
        return cls(
            y=[obs.y for obs in observations],
            delta=[obs.delta for obs in observations],
            x=[list(obs.x) for obs in observations],
            names=tuple(names),
        )

    def __len__(self) -> int:
        return self.y.size

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.delta.sum())

    @property
    def observations(self) -> Tuple[Observation, ...]:
        return tuple(
            Observation(float(self.y[i]), int(self.delta[i]), tuple(float(v) for v in self.x[i]))
            for i in range(self.n)
        )

    def residuals(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.d,):
            raise DataValidationError(f'beta has shape {beta.shape}, expected ({self.d},)')
        return self.y - self.x @ beta

    def take(self, index) -> 'Dataset':
        index = np.asarray(index)
        return Dataset(self.y[index], self.delta[index], self.x[index], self.names)

    def canonical(self) -> 'Dataset':
        """Rows sorted by (y, delta, x); fits on it do not depend on input order."""
        keys = [self.x[:, k] for k in reversed(range(self.d))] + [self.delta, self.y]
        return self.take(np.lexsort(keys))


@dataclass(frozen=True, eq=False)
class SieveModel:
    """theta = (beta, gamma) with g = log-hazard spline of the residual law."""

    beta: np.ndarray
    log_hazard: SplineFunction

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, 'beta', beta)

    @classmethod
    def from_theta(cls, theta, d: int, basis: SplineBasis,
                   gamma_bound: float = DEFAULT_GAMMA_BOUND) -> 'SieveModel':
        theta = np.asarray(theta, dtype=float)
        if theta.size != d + basis.q:
            raise DataValidationError(f'theta has {theta.size} entries, expected {d + basis.q}')
        return cls(theta[:d], SplineFunction(basis, theta[d:], gamma_bound))

    @property
    def basis(self) -> SplineBasis:
        return self.log_hazard.basis

    @property
    def gamma(self) -> np.ndarray:
        return self.log_hazard.gamma

    @property
    def d(self) -> int:
        return self.beta.size

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma])


@dataclass(frozen=True, eq=False)
class LikelihoodWorkspace:
    """Log-likelihood with (optionally) its score and Hessian in theta = (beta, gamma)."""

    value: float
    score: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    n_extrapolated: int = 0


def residual(obs: Observation, beta) -> float:
    x = np.asarray(obs.x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape != beta.shape:
        raise DataValidationError(f'covariate dimension {x.size} does not match beta {beta.size}')
    return float(obs.y - x @ beta)


def residual_domain(residuals, margin: float = 0.05) -> Tuple[float, float]:
    """[min - margin*range, max + margin*range] of the residuals."""
    residuals = np.asarray(residuals, dtype=float)
    low, high = float(residuals.min()), float(residuals.max())
    spread = high - low
    if spread <= 0:
        spread = max(1.0, abs(low))
    return low - margin * spread, high + margin * spread


def check_domain(residuals: np.ndarray, basis: SplineBasis) -> int:
    """
    Validate residuals against the extended domain [a - (b-a), b + (b-a)].

    Returns:
        Number of residuals outside [a, b] (handled by linear extrapolation).
    """
    a, b = basis.lower, basis.upper
    width = b - a
    bad = ~np.isfinite(residuals) | (residuals < a - width) | (residuals > b + width)
    if np.any(bad):
        index = int(np.flatnonzero(bad)[0])
        raise DomainViolationError(
            f'residual {residuals[index]!r} outside the extended domain '
            f'[{a - width:.6g}, {b + width:.6g}]',
            index,
        )
    return int(np.count_nonzero((residuals < a) | (residuals > b)))


def integration_nodes(residuals: np.ndarray, basis: SplineBasis,
                      quad: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nodes and weights for int_a^{max(e_i, a)} of every observation.

    The range is split at the knots, at b, and (for residuals beyond b) runs through
    one extra segment [b, max e_i] where g is linear.

    Returns:
        (nodes, weights) of shape (n, n_segments * n_points).
    """
    bounds = basis.breakpoints
    top = float(residuals.max())
    if top > basis.upper:
        bounds = np.append(bounds, top)
    lower = bounds[:-1]
    upper = np.clip(residuals[:, None], lower[None, :], bounds[1:][None, :])
    nodes, weights = quad.mapped(np.broadcast_to(lower, upper.shape), upper)
    n = residuals.size
    return nodes.reshape(n, -1), weights.reshape(n, -1)


def evaluate(data: Dataset, model: SieveModel, quad: QuadratureRule, level: int = 2) -> LikelihoodWorkspace:
    """
    Evaluate the sieve log-likelihood and, depending on `level`, its derivatives.

    Args:
        data: The sample.
        model: Current (beta, gamma).
        quad: Gauss-Legendre rule used on every segment.
        level: 0 for the value, 1 adds the score, 2 adds the Hessian.

    Returns:
        LikelihoodWorkspace; score has length d + q, Hessian is (d+q) x (d+q).
    """
    if model.d != data.d:
        raise DataValidationError(f'model has {model.d} coefficients, data has {data.d} covariates')
    basis = model.basis
    gamma = model.gamma
    n, d, q = data.n, data.d, basis.q

    eps = data.residuals(model.beta)
    n_extrapolated = check_domain(eps, basis)

    nodes, weights = integration_nodes(eps, basis, quad)
    phi = basis.design_extended(nodes.ravel())                  # (n*m, q)
    with np.errstate(over='ignore'):
        hazard_w = weights.ravel() * np.exp(phi @ gamma)         # w * exp(g) per node
    if np.any(np.isnan(hazard_w)):
        raise IntegrationError('cumulative hazard integrand is NaN')
    cum_hazard = hazard_w.reshape(n, -1).sum(axis=1)

    phi_eps = basis.design_extended(eps)                         # (n, q)
    g_eps = phi_eps @ gamma
    events = data.delta.astype(float)
    value = float(np.mean(events * g_eps - cum_hazard))
    if level == 0:
        return LikelihoodWorkspace(value, n_extrapolated=n_extrapolated)

    x = data.x
    dphi_eps = basis.design_extended(eps, 1)
    dg_eps = dphi_eps @ gamma
    inside = (eps > basis.lower).astype(float)
    with np.errstate(over='ignore'):
        hazard_eps = np.exp(g_eps) * inside                      # Leibniz term of the upper limit

    # d/d beta: e_i moves by -x_i.
    beta_weight = events * dg_eps - hazard_eps
    score_beta = -(x * beta_weight[:, None]).mean(axis=0)
    integrated_phi = (hazard_w[:, None] * phi).reshape(n, -1, q).sum(axis=1)
    score_gamma = (events[:, None] * phi_eps - integrated_phi).mean(axis=0)
    score = np.concatenate([score_beta, score_gamma])
    if level == 1:
        return LikelihoodWorkspace(value, score, n_extrapolated=n_extrapolated)

    d2g_eps = basis.design_extended(eps, 2) @ gamma if basis.order > 2 else np.zeros(n)
    bb_weight = events * d2g_eps - hazard_eps * dg_eps
    h_bb = (x * bb_weight[:, None]).T @ x / n
    bg_rows = events[:, None] * dphi_eps - hazard_eps[:, None] * phi_eps
    h_bg = -(x.T @ bg_rows) / n
    h_gg = -(phi.T @ (hazard_w[:, None] * phi)) / n

    hessian = np.empty((d + q, d + q))
    hessian[:d, :d] = h_bb
    hessian[:d, d:] = h_bg
    hessian[d:, :d] = h_bg.T
    hessian[d:, d:] = h_gg
    hessian = 0.5 * (hessian + hessian.T)
    return LikelihoodWorkspace(value, score, hessian, n_extrapolated)


def log_likelihood(data: Dataset, model: SieveModel, quad: QuadratureRule) -> float:
    return evaluate(data, model, quad, level=0).value


def score(data: Dataset, model: SieveModel, quad: QuadratureRule) -> np.ndarray:
    return evaluate(data, model, quad, level=1).score


def hessian(data: Dataset, model: SieveModel, quad: QuadratureRule) -> np.ndarray:
    return evaluate(data, model, quad, level=2).hessian
