"""Standard errors for beta-hat: efficient-score information and observed information."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg, stats

from src.errors import EmptyRiskSetError, NumericalError
from src.fitter import FitResult
from src.model_likelihood import Dataset, Observation
from src.quadrature import QuadratureRule, gauss_legendre, integrate_piecewise

logger = logging.getLogger(__name__)

# Information matrices with a larger condition number are reported as singular.
SINGULAR_CONDITION = 1e12


def xbar(data: Dataset, beta, t: float) -> np.ndarray:
    """
    Covariate mean over the risk set {i : y_i - x_i'beta >= t}.

    Raises:
        EmptyRiskSetError: when nobody is at risk at t.
    """
    at_risk = data.residuals(beta) >= t
    if not np.any(at_risk):
        raise EmptyRiskSetError(f'risk set is empty at t={t!r}')
    return data.x[at_risk].mean(axis=0)


class EfficientScoreParts:
    """
    Plug-in pieces of the efficient score at theta-hat.

    X-bar(t) is kept as a step function: with sorted residuals r_(1) <= ... <= r_(n)
    it equals the mean of the covariates of ranks k..n on (r_(k-1), r_(k)].
    """

    def __init__(self, data: Dataset, fit: FitResult):
        self.beta = fit.beta
        self.log_hazard = fit.model.log_hazard
        eps = data.residuals(fit.beta)
        order = np.argsort(eps, kind='stable')
        self.sorted_residuals = eps[order]
        sorted_x = data.x[order]
        tail_sums = np.cumsum(sorted_x[::-1], axis=0)[::-1]
        counts = np.arange(data.n, 0, -1)[:, None]
        self.suffix_means = tail_sums / counts

    @property
    def jump_points(self) -> np.ndarray:
        return self.sorted_residuals

    def xbar(self, s) -> np.ndarray:
        """X-bar at each point of s; shape (len(s), d)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        rank = np.searchsorted(self.sorted_residuals, s, side='left')
        if np.any(rank >= self.sorted_residuals.size):
            raise EmptyRiskSetError(f'risk set is empty at t={s[rank >= self.sorted_residuals.size][0]!r}')
        return self.suffix_means[rank]

    def dlog_hazard(self, s) -> np.ndarray:
        return self.log_hazard.values_extended(s, deriv=1)

    def hazard(self, s) -> np.ndarray:
        return np.exp(self.log_hazard.values_extended(s))


def efficient_score_i(obs: Observation, fit: FitResult, parts: EfficientScoreParts,
                      quad: QuadratureRule) -> np.ndarray:
    """
    Plug-in efficient score of one observation.

    delta {x - X(e)} (-g'(e)) - int_a^e {x - X(s)} (-g'(s)) exp(g(s)) ds, with the
    integral split at the knots and at every jump of X-bar.
    """
    x = np.asarray(obs.x, dtype=float)
    eps = float(obs.y - x @ fit.beta)
    basis = fit.basis
    # Snap onto the stored residual so the subject counts in its own risk set.
    nearest = parts.sorted_residuals[np.argmin(np.abs(parts.sorted_residuals - eps))]
    if abs(nearest - eps) <= 1e-12 * max(1.0, abs(eps)):
        eps = float(nearest)

    event_part = np.zeros_like(x)
    if obs.delta:
        event_part = (x - parts.xbar(eps)[0]) * -parts.dlog_hazard(eps)[0]

    if eps <= basis.lower:
        return event_part

    def integrand(s):
        weight = -parts.dlog_hazard(s) * parts.hazard(s)
        return (x[None, :] - parts.xbar(s)) * weight[:, None]

    breakpoints = np.union1d(basis.breakpoints, parts.jump_points)
    compensator = integrate_piecewise(integrand, breakpoints, quad, basis.lower, eps)
    return event_part - compensator


def efficient_scores(data: Dataset, fit: FitResult, quad: QuadratureRule) -> np.ndarray:
    """
    Efficient scores of all observations, shape (n, d).

    Uses one grid of cells (knots plus residuals) shared by every observation and
    cumulative sums of the cell integrals, so each score costs O(1) after setup.
    """
    parts = EfficientScoreParts(data, fit)
    basis = fit.basis
    a = basis.lower
    eps = data.residuals(fit.beta)

    grid = np.union1d(basis.breakpoints, eps[eps > a])
    grid = grid[grid <= max(a, eps.max())]
    lower, upper = grid[:-1], grid[1:]
    nodes, weights = quad.mapped(lower, upper)                 # (cells, m)
    flat = nodes.ravel()
    weight = -parts.dlog_hazard(flat) * parts.hazard(flat)
    cell_mass = (weights.ravel() * weight).reshape(nodes.shape).sum(axis=1)
    cell_xbar = parts.xbar(0.5 * (lower + upper))
    cum_mass = np.concatenate([[0.0], np.cumsum(cell_mass)])
    cum_moment = np.vstack([np.zeros((1, data.d)), np.cumsum(cell_xbar * cell_mass[:, None], axis=0)])

    position = np.searchsorted(grid, eps)
    position = np.where(eps > a, position, 0)
    mass = cum_mass[position]
    moment = cum_moment[position]

    events = data.delta.astype(float)
    centred = data.x - parts.xbar(eps)
    event_part = (events * -parts.dlog_hazard(eps))[:, None] * centred
    return event_part - (data.x * mass[:, None] - moment)


def info_efficient(data: Dataset, fit: FitResult, quad: QuadratureRule,
                   scores: Optional[np.ndarray] = None) -> np.ndarray:
    """
    P_n of the outer product of the plug-in efficient scores (d x d).

    `scores` are the rows of efficient_scores when the caller already has them.
    """
    if not fit.converged:
        logger.warning('Efficient information evaluated at a non-converged fit')
    if scores is None:
        scores = efficient_scores(data, fit, quad)
    return scores.T @ scores / data.n


def observed_information(hessian: np.ndarray, d: int, ridge_eps: float = 1e-8) -> Tuple[np.ndarray, bool]:
    """
    Per-observation information for beta with gamma profiled out.

    Inverts the full -H and takes the inverse of its beta block (the Schur
    complement). A ridge is added when -H is not positive definite.

    Returns:
        (information, ridge_used).
    """
    info = -np.asarray(hessian, dtype=float)
    info = 0.5 * (info + info.T)
    identity = np.eye(info.shape[0])
    ridge = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(info)))))
    while True:
        try:
            factor = linalg.cho_factor(info + ridge * identity)
            break
        except linalg.LinAlgError:
            ridge = ridge_eps * scale if ridge == 0.0 else 10.0 * ridge
            if ridge > scale:
                raise NumericalError('observed information could not be stabilized') from None
    if ridge > 0:
        logger.warning('Observed information not positive definite; ridge %.3g used', ridge)
    inverse = linalg.cho_solve(factor, identity)
    beta_block = 0.5 * (inverse[:d, :d] + inverse[:d, :d].T)
    return linalg.inv(beta_block), ridge > 0


def info_observed(data: Dataset, fit: FitResult) -> np.ndarray:
    """Schur-complement information for beta from the last Newton Hessian (d x d).

    Coefficients held at the gamma bound are not estimated and are left out.
    """
    information, _ = observed_information(fit.free_hessian, data.d, fit.config.ridge_eps)
    return information


def _standard_errors(information: np.ndarray, n: int) -> Tuple[np.ndarray, float, bool]:
    information = 0.5 * (information + information.T)
    eigenvalues = np.linalg.eigvalsh(information)
    condition = float(np.inf if eigenvalues[0] <= 0 else eigenvalues[-1] / eigenvalues[0])
    if not np.isfinite(condition) or condition > SINGULAR_CONDITION:
        return np.full(information.shape[0], np.nan), condition, True
    covariance = linalg.inv(information) / n
    return np.sqrt(np.diag(covariance)), condition, False


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """
    Both standard-error estimates of beta-hat.

    see1 comes from the efficient-score information, see2 from the observed
    information of all parameters. A flag is set when the corresponding matrix is
    singular (its SEE is then NaN) or needed a ridge.
    """

    info_efficient: np.ndarray
    info_observed: np.ndarray
    see1: np.ndarray
    see2: np.ndarray
    condition_numbers: Dict[str, float]
    flags: Dict[str, bool] = field(default_factory=dict)
    score_sum_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            'see1': self.see1.tolist(),
            'see2': self.see2.tolist(),
            'condition_numbers': self.condition_numbers,
            'flags': self.flags,
            'score_sum_norm': self.score_sum_norm,
        }


def variance_report(data: Dataset, fit: FitResult, quad: QuadratureRule = None) -> VarianceReport:
    """Compute SEE1 and SEE2 for a fitted model."""
    quad = quad or gauss_legendre(fit.config.quad_points)
    data = data.canonical()
    scores = efficient_scores(data, fit, quad)
    efficient = info_efficient(data, fit, quad, scores)
    see1, cond1, singular1 = _standard_errors(efficient, data.n)
    if singular1:
        logger.warning('Efficient information is singular (condition %.3g)', cond1)

    observed, ridged = observed_information(fit.free_hessian, data.d, fit.config.ridge_eps)
    see2, cond2, singular2 = _standard_errors(observed, data.n)
    if singular2:
        logger.warning('Observed information is singular (condition %.3g)', cond2)

    return VarianceReport(
        info_efficient=efficient,
        info_observed=observed,
        see1=see1,
        see2=see2,
        condition_numbers={'efficient': cond1, 'observed': cond2},
        flags={'efficient_singular': singular1, 'observed_singular': singular2,
               'observed_ridge': ridged},
        score_sum_norm=float(np.linalg.norm(scores.sum(axis=0))),
    )


def wald_intervals(beta, se, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
    """Normal-theory intervals beta +/- z * se."""
    z = stats.norm.ppf(0.5 + level / 2.0)
    beta = np.asarray(beta, dtype=float)
    se = np.asarray(se, dtype=float)
    return beta - z * se, beta + z * se
