"""Joint Newton-Raphson maximization of the sieve log-likelihood in (beta, gamma)."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from src.config import FitConfig
from src.errors import AftSieveError, NumericalError
from src.model_likelihood import (
    Dataset,
    LikelihoodWorkspace,
    SieveModel,
    evaluate,
    residual_domain,
)
from src.quadrature import gauss_legendre
from src.spline_basis import SplineBasis, build_knots

logger = logging.getLogger(__name__)

# Ridge escalation stops after this many tenfold increases.
MAX_RIDGE_STEPS = 40


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Outcome of one sieve fit.

    Attributes:
        model: The estimate theta-hat = (beta-hat, gamma-hat).
        loglik: Average log-likelihood at theta-hat.
        n_iter: Newton iterations performed.
        converged: True when both the parameter change and the score of the free
            coordinates are below tol.
        grad_norm: max |score| at theta-hat over the coordinates not held at the bound.
        hessian_at_opt: Average Hessian at theta-hat, (d+q) x (d+q).
        extrapolation_fraction: Share of residuals outside [a, b] at theta-hat.
        n_obs: Sample size.
        loglik_path: Accepted log-likelihood values, starting point first.
        config: Settings the fit ran with.
        active_bounds: Indices j of the gamma_j held at +/-gamma_bound.
    """

    model: SieveModel
    loglik: float
    n_iter: int
    converged: bool
    grad_norm: float
    hessian_at_opt: np.ndarray
    extrapolation_fraction: float
    n_obs: int
    loglik_path: Tuple[float, ...] = field(default=())
    config: FitConfig = field(default_factory=FitConfig)
    active_bounds: Tuple[int, ...] = field(default=())

    @property
    def beta(self) -> np.ndarray:
        return self.model.beta

    @property
    def gamma(self) -> np.ndarray:
        return self.model.gamma

    @property
    def basis(self) -> SplineBasis:
        return self.model.basis

    @property
    def free_hessian(self) -> np.ndarray:
        """Hessian with the rows and columns of the bound-held coefficients removed."""
        free = np.ones(self.hessian_at_opt.shape[0], dtype=bool)
        free[[self.model.d + j for j in self.active_bounds]] = False
        return self.hessian_at_opt[np.ix_(free, free)]

    @property
    def flagged(self) -> bool:
        return self.extrapolation_fraction > self.config.extrapolation_warn_fraction

    def diagnostics(self) -> dict:
        return {
            'converged': self.converged,
            'n_iter': self.n_iter,
            'grad_norm': self.grad_norm,
            'loglik': self.loglik,
            'extrapolation_fraction': self.extrapolation_fraction,
            'flagged': self.flagged,
            'active_bounds': list(self.active_bounds),
        }


def ols_start(data: Dataset) -> np.ndarray:
    """
    Least squares of y on (1, x) over uncensored observations; the intercept is dropped.

    Falls back to beta = 0 (with a warning) when the uncensored design is rank deficient.
    """
    d = data.d
    events = data.delta == 1
    design = np.column_stack([np.ones(int(events.sum())), data.x[events]])
    if design.shape[0] < d + 1 or np.linalg.matrix_rank(design) < d + 1:
        logger.warning(
            'Uncensored design (%d rows) is rank deficient; starting from beta = 0',
            design.shape[0],
        )
        return np.zeros(d)
    coef, *_ = np.linalg.lstsq(design, data.y[events], rcond=None)
    return coef[1:]


def initial_estimate(
    data: Dataset,
    q: int = 1,
    lower: Optional[float] = None,
    margin: float = 0.05,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Starting values for Newton-Raphson.

    Args:
        data: The sample.
        q: Number of spline coefficients to fill.
        lower: Left end a of the basis interval; derived from the starting
            residuals with `margin` when omitted.
        margin: Relative margin used when `lower` is derived.

    Returns:
        (beta0, gamma0): OLS slopes on the uncensored rows and the constant
        exponential log-hazard log(sum delta / sum(e_i - a)) repeated q times.
    """
    beta0 = ols_start(data)
    eps = data.residuals(beta0)
    if lower is None:
        lower = residual_domain(eps, margin)[0]
    exposure = np.clip(eps - lower, 0.0, None).sum()
    if exposure <= 0:
        raise NumericalError('no exposure above the lower end of the basis interval')
    c_hat = float(np.log(data.n_events / exposure))
    return beta0, np.full(q, c_hat)


def make_basis(data: Dataset, beta: np.ndarray, config: FitConfig) -> SplineBasis:
    """Basis on [a, b] spanned by the residuals at `beta`, widened by the margin."""
    eps = data.residuals(beta)
    interval = residual_domain(eps, config.domain_margin)
    knots = build_knots(interval, config.n_interior_knots, config.order,
                        config.knot_placement, residuals=eps)
    return SplineBasis(knots)


def newton_direction(hess: np.ndarray, grad: np.ndarray, ridge_eps: float) -> np.ndarray:
    """
    Solve (-H) step = S, shifting -H by a growing ridge until it is positive definite.
    """
    info = -hess
    identity = np.eye(info.shape[0])
    ridge = 0.0
    for _ in range(MAX_RIDGE_STEPS):
        try:
            factor = linalg.cho_factor(info + ridge * identity)
        except linalg.LinAlgError:
            ridge = ridge_eps if ridge == 0.0 else 10.0 * ridge
            continue
        if ridge > 0:
            logger.debug('Hessian not negative definite; ridge %.3g added', ridge)
        return linalg.cho_solve(factor, grad)
    raise NumericalError('Newton system could not be stabilized with a ridge')


def _try_evaluate(data: Dataset, theta: np.ndarray, basis: SplineBasis, config: FitConfig,
                  quad) -> Optional[Tuple[SieveModel, LikelihoodWorkspace]]:
    try:
        model = SieveModel.from_theta(theta, data.d, basis, config.gamma_bound)
        work = evaluate(data, model, quad, level=2)
    except AftSieveError as exc:
        logger.debug('Trial point rejected: %s', exc)
        return None
    if not np.isfinite(work.value) or not np.all(np.isfinite(work.hessian)):
        return None
    return model, work


def _clip_gamma(theta: np.ndarray, d: int, bound: float) -> bool:
    gamma = theta[d:]
    if np.any(np.abs(gamma) > bound):
        np.clip(gamma, -bound, bound, out=gamma)
        return True
    return False


def active_bounds(theta: np.ndarray, score: np.ndarray, d: int, bound: float) -> np.ndarray:
    """
    Positions in theta of the gamma coordinates held at +/-bound.

    A coordinate is active when it sits on the bound and the score pushes it
    further out; it is then left out of the Newton system and the stopping rule.
    """
    gamma, grad = theta[d:], score[d:]
    pinned = ((gamma >= bound) & (grad > 0)) | ((gamma <= -bound) & (grad < 0))
    return d + np.flatnonzero(pinned)


def _free_mask(size: int, active: np.ndarray) -> np.ndarray:
    free = np.ones(size, dtype=bool)
    free[active] = False
    return free


def _newton_step(work: LikelihoodWorkspace, free: np.ndarray, config: FitConfig) -> np.ndarray:
    step = np.zeros_like(work.score)
    step[free] = newton_direction(work.hessian[np.ix_(free, free)], work.score[free], config.ridge_eps)
    return step


def _halve_until_ascent(data: Dataset, theta: np.ndarray, step: np.ndarray, value: float,
                        basis: SplineBasis, config: FitConfig, quad):
    """First of step, step/2, ... (projected onto the box) that does not lower the log-likelihood."""
    for _ in range(config.step_halving_max + 1):
        trial = theta + step
        _clip_gamma(trial, data.d, config.gamma_bound)
        result = _try_evaluate(data, trial, basis, config, quad)
        if result is not None and result[1].value >= value:
            return trial, result
        step = 0.5 * step
    return None


def fit(data: Dataset, config: Optional[FitConfig] = None,
        seed_basis: Optional[SplineBasis] = None) -> FitResult:
    """
    Maximize the sieve log-likelihood by damped Newton-Raphson.

    Coefficients driven onto the +/-gamma_bound box are frozen while the score
    points outward, so the stopping rule is the KKT condition of the boxed problem.

    Args:
        data: The sample; rows are put in canonical order first.
        config: Fit settings (defaults: cubic, one interior knot, tol 1e-5).
        seed_basis: Fixed basis to use instead of one built from the starting residuals.

    Returns:
        FitResult. Non-convergence is reported through `converged`, never raised.
    """
    config = config or FitConfig()
    data = data.canonical()
    d = data.d

    beta0 = ols_start(data)
    basis = seed_basis if seed_basis is not None else make_basis(data, beta0, config)
    _, gamma0 = initial_estimate(data, basis.q, basis.lower, config.domain_margin)
    theta = np.concatenate([beta0, gamma0])
    if _clip_gamma(theta, d, config.gamma_bound):
        logger.warning('Starting log-hazard clipped to +/-%g', config.gamma_bound)

    quad = gauss_legendre(config.quad_points)
    start = _try_evaluate(data, theta, basis, config, quad)
    if start is None:
        raise NumericalError('log-likelihood is not finite at the starting values')
    model, work = start
    logger.debug('Start: loglik=%.10g, %r', work.value, basis)

    path = [work.value]
    converged = False
    n_iter = 0
    active = active_bounds(theta, work.score, d, config.gamma_bound)
    for n_iter in range(1, config.max_iter + 1):
        free = _free_mask(theta.size, active)
        step = _newton_step(work, free, config)
        accepted = _halve_until_ascent(data, theta, step, work.value, basis, config, quad)
        crossing = d + np.flatnonzero(free[d:] & (np.abs(theta[d:] + step[d:]) > config.gamma_bound))
        if accepted is None and crossing.size:
            # Retry with the coordinates that would leave the box held where they are.
            held = _free_mask(theta.size, np.union1d(active, crossing))
            accepted = _halve_until_ascent(data, theta, _newton_step(work, held, config),
                                           work.value, basis, config, quad)

        if accepted is None:
            logger.debug('Iteration %d: no ascent after %d halvings', n_iter, config.step_halving_max)
            converged = bool(np.max(np.abs(work.score[free])) <= config.tol)
            break

        trial, (model, work) = accepted
        change = float(np.max(np.abs(trial - theta)))
        theta = trial
        path.append(work.value)
        active = active_bounds(theta, work.score, d, config.gamma_bound)
        grad_norm = float(np.max(np.abs(work.score[_free_mask(theta.size, active)])))
        logger.debug('Iteration %d: loglik=%.12g |step|=%.3g |score|=%.3g active=%s',
                     n_iter, work.value, change, grad_norm, (active - d).tolist())
        if change <= config.tol and grad_norm <= config.tol:
            converged = True
            break

    active = active_bounds(theta, work.score, d, config.gamma_bound)
    grad_norm = float(np.max(np.abs(work.score[_free_mask(theta.size, active)])))
    extrapolated = work.n_extrapolated / data.n
    result = FitResult(
        model=model,
        loglik=work.value,
        n_iter=n_iter,
        converged=converged,
        grad_norm=grad_norm,
        hessian_at_opt=work.hessian,
        extrapolation_fraction=extrapolated,
        n_obs=data.n,
        loglik_path=tuple(path),
        config=config,
        active_bounds=tuple((active - d).tolist()),
    )
    if result.active_bounds:
        logger.warning('Spline coefficients %s held at the +/-%g bound',
                    list(result.active_bounds), config.gamma_bound)
    if result.flagged:
        logger.warning('%.1f%% of fitted residuals lie outside [a, b]', 100 * extrapolated)
    if not converged:
        logger.warning('Newton-Raphson did not converge after %d iterations (|score| = %.3g)',
                       n_iter, grad_norm)
    return result


def hazard_curve(fit_result: FitResult, n_points: int = 200) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid over [a, b] with the fitted log-hazard and hazard on it."""
    basis = fit_result.basis
    grid = np.linspace(basis.lower, basis.upper, n_points)
    log_hazard = fit_result.model.log_hazard.values(grid)
    return grid, log_hazard, np.exp(log_hazard)
