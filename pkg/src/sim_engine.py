"""Monte Carlo study of the sieve estimator under the six error laws.

Failure times follow log T = 2 + X1 + X2 + e0 with X1 ~ Bernoulli(0.5) and
X2 ~ N(0, 0.5^2) truncated at +/-2; log censoring times are Uniform[0, c] (or censoring
times Uniform[0, c] on the time scale) with c tuned to a target censoring rate.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, stats

from src.config import FitConfig, knots_for_sample_size, worker_count
from src.error_laws import ErrorDistribution
from src.errors import AftSieveError, BracketingError, ConfigurationError, SimulationAbortedError
from src.fitter import fit
from src.model_likelihood import Dataset
from src.quadrature import gauss_legendre, integrate_piecewise
from src.variance import variance_report

logger = logging.getLogger(__name__)

INTERCEPT = 2.0
TRUE_BETA = (1.0, 1.0)
X2_SD = 0.5
X2_TRUNCATION = 2.0
COVARIATE_NAMES = ('x1', 'x2')
CENSORING_SCALES = ('time', 'log')

# Share of failed replications above which a study is abandoned.
MAX_FAILURE_FRACTION = 0.10
# One-sided level of the "empirical SE below the bound" check.
BOUND_TEST_LEVEL = 0.01
# Points of the error-scale grid on which replication hazard estimates are averaged.
HAZARD_GRID_POINTS = 50


@dataclass(frozen=True)
class SimDesign:
    """
    One cell of the simulation table.

    Attributes:
        n: Sample size per replication.
        error: Error law of e0.
        n_reps: Number of replications.
        censor_rate_target: Target censoring fraction.
        knots: Interior knots; None applies the 1 (n <= 400) / 2 (n > 400) policy.
        seed: Master seed; every random stream of the study derives from it.
        censoring_scale: 'log' (default) draws log C ~ U[0, c]; 'time' draws
            C ~ U[0, c] and uses log C.
        workers: Worker processes; None reads AFT_SIEVE_THREADS.
        calibration_draws: Monte Carlo size used to tune c.
        order, tol, quad_points: Passed on to FitConfig.
    """

    n: int
    error: ErrorDistribution
    n_reps: int = 500
    censor_rate_target: float = 0.25
    knots: Optional[int] = None
    seed: int = 0
    censoring_scale: str = 'log'
    workers: Optional[int] = None
    calibration_draws: int = 1_000_000
    order: int = 4
    tol: float = 1e-5
    quad_points: int = 10

    def __post_init__(self):
        if not isinstance(self.error, ErrorDistribution):
            raise ConfigurationError(f'error must be an ErrorDistribution, got {self.error!r}')
        if self.n < 2:
            raise ConfigurationError(f'sample size must be >= 2, got {self.n}')
        if self.n_reps < 1:
            raise ConfigurationError(f'n_reps must be >= 1, got {self.n_reps}')
        if not 0.0 <= self.censor_rate_target < 1.0:
            raise ConfigurationError(
                f'censor_rate_target must be in [0, 1), got {self.censor_rate_target}'
            )
        if self.censoring_scale not in CENSORING_SCALES:
            raise ConfigurationError(
                f'censoring_scale must be one of {CENSORING_SCALES}, got {self.censoring_scale!r}'
            )
        if self.knots is not None and self.knots < 0:
            raise ConfigurationError(f'knots must be >= 0, got {self.knots}')
        if self.calibration_draws < 1000:
            raise ConfigurationError(f'calibration_draws must be >= 1000, got {self.calibration_draws}')

    @property
    def n_interior_knots(self) -> int:
        return self.knots if self.knots is not None else knots_for_sample_size(self.n)

    def fit_config(self) -> FitConfig:
        return FitConfig(order=self.order, n_interior_knots=self.n_interior_knots,
                         tol=self.tol, quad_points=self.quad_points)

    def to_dict(self) -> dict:
        snapshot = asdict(self)
        snapshot['error'] = self.error.kind
        snapshot['n_interior_knots'] = self.n_interior_knots
        return snapshot


def sample_error(dist: ErrorDistribution, rng: np.random.Generator) -> float:
    return float(dist.sample(rng, 1)[0])


def sample_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    """X1 ~ Bernoulli(0.5); X2 ~ N(0, 0.5^2) truncated at +/-2 by rejection."""
    x1 = (rng.random(n) < 0.5).astype(float)
    x2 = rng.normal(0.0, X2_SD, n)
    rejected = np.abs(x2) > X2_TRUNCATION
    while np.any(rejected):
        x2[rejected] = rng.normal(0.0, X2_SD, int(rejected.sum()))
        rejected = np.abs(x2) > X2_TRUNCATION
    return np.column_stack([x1, x2])


def _log_failure_times(dist: ErrorDistribution, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    x = sample_covariates(rng, n)
    errors = dist.sample(rng, n)
    return x, INTERCEPT + x @ np.asarray(TRUE_BETA) + errors


def _log_censoring_times(rng: np.random.Generator, n: int, censor_c: float, scale: str) -> np.ndarray:
    if np.isinf(censor_c):
        return np.full(n, np.inf)
    u = 1.0 - rng.random(n)                 # (0, 1]
    if scale == 'time':
        return np.log(censor_c * u)
    return censor_c * u


def gen_dataset(design: SimDesign, censor_c: float, rng: np.random.Generator) -> Dataset:
    """
    Draw one sample on the log-time scale.

    Args:
        design: Study design (sample size, error law, censoring scale).
        censor_c: Upper end c of the censoring distribution; np.inf disables censoring.
        rng: Random generator.
    """
    if not censor_c > 0:
        raise ConfigurationError(f'censor_c must be positive, got {censor_c}')
    x, log_t = _log_failure_times(design.error, rng, design.n)
    log_c = _log_censoring_times(rng, design.n, censor_c, design.censoring_scale)
    delta = (log_t <= log_c).astype(int)
    y = np.minimum(log_t, log_c)
    return Dataset(y, delta, x, COVARIATE_NAMES)


def censoring_rate(log_t: np.ndarray, censor_c: float, scale: str = 'log') -> float:
    """P(C' < T') given the failure draws, integrating the uniform exactly."""
    if scale == 'time':
        return float(np.mean(np.clip(np.exp(log_t) / censor_c, 0.0, 1.0)))
    return float(np.mean(np.clip(log_t / censor_c, 0.0, 1.0)))


def calibrate_censoring(error: ErrorDistribution, target: float, rng: np.random.Generator,
                        draws: int = 1_000_000, scale: str = 'log') -> float:
    """
    Find c such that the censoring fraction equals `target`.

    The failure times are drawn once, so the rate is a smooth decreasing function of c
    and the root in log c is found with Brent's method.
    """
    if not 0.0 < target < 1.0:
        raise BracketingError(f'censoring target {target} is not reachable (need 0 < target < 1)')
    _, log_t = _log_failure_times(error, rng, draws)

    def excess(log_c):
        return censoring_rate(log_t, np.exp(log_c), scale) - target

    start = float(np.log(np.exp(log_t).mean())) if scale == 'time' else float(np.log(max(log_t.mean(), 1e-3)))
    lo, hi = start - 1.0, start + 1.0
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo -= 1.0
    else:
        raise BracketingError(f'censoring rate {target} cannot be reached with small c')
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi += 1.0
    else:
        raise BracketingError(f'censoring rate {target} cannot be reached with large c')
    log_c = optimize.brentq(excess, lo, hi, xtol=1e-12)
    return float(np.exp(log_c))


def covariate_support(n_nodes: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """
    Discrete representation of the covariate law for deterministic expectations.

    Returns:
        (points, probabilities): X1 exactly on {0, 1}, truncated-normal X2 on
        Gauss-Legendre nodes of [-2, 2].
    """
    rule = gauss_legendre(n_nodes)
    x2, w2 = rule.mapped(-X2_TRUNCATION, X2_TRUNCATION)
    density = stats.norm.pdf(x2, scale=X2_SD) * w2
    density = density / density.sum()
    points = np.array([(x1, v) for x1 in (0.0, 1.0) for v in x2])
    probs = np.concatenate([0.5 * density, 0.5 * density])
    return points, probs


def _censoring_survival(u: np.ndarray, censor_c: float, scale: str) -> np.ndarray:
    """P(C' >= u) on the log-time scale."""
    if np.isinf(censor_c):
        return np.ones_like(u)
    if scale == 'time':
        return np.clip(1.0 - np.exp(u) / censor_c, 0.0, 1.0)
    return np.clip(1.0 - u / censor_c, 0.0, 1.0)


def efficient_information(error: ErrorDistribution, censor_c: float, scale: str = 'log',
                          segments: int = 400, quad_points: int = 10) -> np.ndarray:
    """
    Semiparametric information I(beta0) of the simulation design.

    I = int g0'(s)^2 f0(s) E[{X - mu(s)}{X - mu(s)}' G(s, X)] ds, where G is the
    probability of still being uncensored at error value s and mu(s) the G-weighted
    covariate mean.
    """
    points, probs = covariate_support()
    shift = INTERCEPT + points @ np.asarray(TRUE_BETA)

    lower = error.lower_quantile(1e-10)
    upper = error.survival_quantile(1e-6)
    kinks = np.array([])
    if not np.isinf(censor_c):
        censor_top = np.log(censor_c) if scale == 'time' else censor_c
        kinks = censor_top - shift
        if kinks.max() > upper:
            logger.warning('Information integral truncated at the 1e-6 survival quantile (%.4g)', upper)
        upper = min(upper, float(kinks.max()))
    if not upper > lower:
        raise BracketingError('censoring removes the whole support of the error law')

    def integrand(s):
        at_risk = _censoring_survival(s[:, None] + shift[None, :], censor_c, scale) * probs
        mass = at_risk.sum(axis=1)
        first = at_risk @ points
        second = np.einsum('mk,ki,kj->mij', at_risk, points, points)
        safe = np.where(mass > 0, mass, 1.0)
        centred = second - np.einsum('mi,mj->mij', first, first) / safe[:, None, None]
        weight = error.dlog_hazard(s) ** 2 * error.pdf(s)
        return centred * weight[:, None, None]

    breakpoints = np.union1d(np.linspace(lower, upper, segments + 1), kinks[(kinks > lower) & (kinks < upper)])
    info = integrate_piecewise(integrand, breakpoints, gauss_legendre(quad_points), lower, upper)
    return 0.5 * (info + info.T)


def efficiency_bound(error: ErrorDistribution, n: int, censor_c: float, scale: str = 'log') -> np.ndarray:
    """sigma* = sqrt(diag(I^-1(beta0)) / n) for each slope."""
    if n < 1:
        raise ConfigurationError(f'n must be >= 1, got {n}')
    info = efficient_information(error, censor_c, scale)
    return np.sqrt(np.diag(np.linalg.inv(info)) / n)


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    beta: Tuple[float, ...] = ()
    see1: Tuple[float, ...] = ()
    see2: Tuple[float, ...] = ()
    converged: bool = False
    censoring_rate: float = float('nan')
    message: str = ''
    log_hazard: Tuple[float, ...] = ()


def hazard_grid(error: ErrorDistribution, n_points: int = HAZARD_GRID_POINTS) -> np.ndarray:
    """Error-scale grid from the 5% to the 90% quantile of e0."""
    return np.linspace(error.lower_quantile(0.05), error.survival_quantile(0.10), n_points)


def _run_replication(args) -> ReplicationResult:
    design, censor_c, seed_seq, index = args
    rng = np.random.default_rng(seed_seq)
    rate = float('nan')
    try:
        data = gen_dataset(design, censor_c, rng)
        rate = 1.0 - data.n_events / data.n
        result = fit(data, design.fit_config())
        if not result.converged:
            return ReplicationResult(index, converged=False, censoring_rate=rate,
                                     message=f'no convergence (|score| = {result.grad_norm:.3g})')
        report = variance_report(data, result)
        # Residuals carry the intercept, so g-hat(t + 2) estimates log lambda0(t).
        log_hazard = result.model.log_hazard.values_extended(hazard_grid(design.error) + INTERCEPT)
    except AftSieveError as exc:
        return ReplicationResult(index, censoring_rate=rate, message=f'{type(exc).__name__}: {exc}')
    return ReplicationResult(
        index,
        beta=tuple(result.beta.tolist()),
        see1=tuple(report.see1.tolist()),
        see2=tuple(report.see2.tolist()),
        converged=True,
        censoring_rate=rate,
        log_hazard=tuple(log_hazard.tolist()),
    )


@dataclass(frozen=True)
class ParameterSummary:
    """One row of the simulation table."""

    parameter: str
    true: float
    est: float
    bias: float
    se: float
    see1: float
    cp1: float
    see2: float
    cp2: float
    sigma_star: float
    z_vs_bound: float
    below_bound: bool


@dataclass(frozen=True)
class SimulationSummary:
    """Aggregated results of run_study; failed replications are excluded and counted."""

    design: SimDesign
    censor_c: float
    rows: Tuple[ParameterSummary, ...]
    n_failed_fits: int
    n_used: int
    mean_censoring_rate: float
    failures: Tuple[str, ...] = field(default=())
    hazard_grid: Tuple[float, ...] = field(default=())
    mean_log_hazard: Tuple[float, ...] = field(default=())
    mean_hazard: Tuple[float, ...] = field(default=())
    true_log_hazard: Tuple[float, ...] = field(default=())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(row) for row in self.rows])
        frame.insert(0, 'dist', self.design.error.key)
        frame.insert(1, 'n', self.design.n)
        return frame.rename(columns={'se': 'SE', 'see1': 'SEE1', 'cp1': 'CP1',
                                     'see2': 'SEE2', 'cp2': 'CP2'})

    def to_dict(self) -> dict:
        return {
            'design': self.design.to_dict(),
            'censor_c': self.censor_c,
            'n_failed_fits': self.n_failed_fits,
            'n_used': self.n_used,
            'mean_censoring_rate': self.mean_censoring_rate,
            'rows': [asdict(row) for row in self.rows],
            'failures': list(self.failures),
            'hazard_curve': self.hazard_curve(),
        }

    def hazard_curve(self) -> dict:
        """Replication-average estimate of the error log-hazard next to the true one."""
        return {
            't': list(self.hazard_grid),
            'mean_log_hazard': list(self.mean_log_hazard),
            'true_log_hazard': list(self.true_log_hazard),
            'mean_hazard': list(self.mean_hazard),
            'true_hazard': np.exp(self.true_log_hazard).tolist(),
        }


def study_streams(design: SimDesign) -> Tuple[np.random.SeedSequence, List[np.random.SeedSequence]]:
    """Calibration stream and one stream per replication, all derived from design.seed."""
    calibration, replications = np.random.SeedSequence(design.seed).spawn(2)
    return calibration, replications.spawn(design.n_reps)


def calibrated_c(design: SimDesign) -> float:
    if design.censor_rate_target == 0.0:
        return float('inf')
    calibration, _ = study_streams(design)
    return calibrate_censoring(design.error, design.censor_rate_target,
                               np.random.default_rng(calibration),
                               design.calibration_draws, design.censoring_scale)


def replication_dataset(design: SimDesign, censor_c: float, index: int = 0) -> Dataset:
    """Regenerate the dataset of replication `index` exactly as run_study draws it."""
    _, streams = study_streams(design)
    return gen_dataset(design, censor_c, np.random.default_rng(streams[index]))


def _summarize(design: SimDesign, censor_c: float, sigma_star: np.ndarray,
               results: List[ReplicationResult]) -> SimulationSummary:
    used = [r for r in results if r.converged]
    failed = [r for r in results if not r.converged]
    rates = np.array([r.censoring_rate for r in results])
    rates = rates[np.isfinite(rates)]
    if len(failed) > MAX_FAILURE_FRACTION * len(results):
        detail = '; '.join(f'#{r.index}: {r.message}' for r in failed[:5])
        raise SimulationAbortedError(
            f'{len(failed)} of {len(results)} replications failed ({detail})'
        )
    for r in failed:
        logger.warning('Replication %d excluded: %s', r.index, r.message)

    beta = np.array([r.beta for r in used])
    see1 = np.array([r.see1 for r in used])
    see2 = np.array([r.see2 for r in used])
    truth = np.asarray(TRUE_BETA)
    z = stats.norm.ppf(0.975)
    n_used = len(used)

    rows = []
    for k, name in enumerate(COVARIATE_NAMES):
        estimates = beta[:, k]
        se = float(np.std(estimates, ddof=1)) if n_used > 1 else float('nan')
        covered1 = np.abs(estimates - truth[k]) <= z * see1[:, k]
        covered2 = np.abs(estimates - truth[k]) <= z * see2[:, k]
        finite1 = np.isfinite(see1[:, k])
        finite2 = np.isfinite(see2[:, k])
        se_of_se = se / np.sqrt(2.0 * (n_used - 1)) if n_used > 1 else float('nan')
        z_bound = float((se - sigma_star[k]) / se_of_se) if n_used > 1 else float('nan')
        rows.append(ParameterSummary(
            parameter=name,
            true=float(truth[k]),
            est=float(estimates.mean()),
            bias=float(estimates.mean() - truth[k]),
            se=se,
            see1=float(np.mean(see1[finite1, k])) if finite1.any() else float('nan'),
            cp1=float(np.mean(covered1[finite1])) if finite1.any() else float('nan'),
            see2=float(np.mean(see2[finite2, k])) if finite2.any() else float('nan'),
            cp2=float(np.mean(covered2[finite2])) if finite2.any() else float('nan'),
            sigma_star=float(sigma_star[k]),
            z_vs_bound=z_bound,
            below_bound=bool(z_bound < stats.norm.ppf(BOUND_TEST_LEVEL)),
        ))
        if rows[-1].below_bound:
            logger.warning('Empirical SE of %s (%.4f) is significantly below sigma* (%.4f)',
                           name, se, sigma_star[k])

    grid = hazard_grid(design.error)
    curves = np.array([r.log_hazard for r in used if len(r.log_hazard) == grid.size]).reshape(-1, grid.size)
    mean_curve = curves.mean(axis=0) if curves.shape[0] else np.full(grid.size, np.nan)
    mean_hazard = np.exp(curves).mean(axis=0) if curves.shape[0] else np.full(grid.size, np.nan)

    return SimulationSummary(
        design=design,
        censor_c=censor_c,
        rows=tuple(rows),
        n_failed_fits=len(failed),
        n_used=n_used,
        mean_censoring_rate=float(rates.mean()) if rates.size else float('nan'),
        failures=tuple(f'#{r.index}: {r.message}' for r in failed),
        hazard_grid=tuple(grid.tolist()),
        mean_log_hazard=tuple(mean_curve.tolist()),
        mean_hazard=tuple(mean_hazard.tolist()),
        true_log_hazard=tuple(design.error.log_hazard(grid).tolist()),
    )


def run_study(design: SimDesign) -> SimulationSummary:
    """
    Run all replications of a design and summarize them.

    Replications run in worker processes with their own random streams and are
    collected in index order, so the summary depends only on the design.
    """
    started = time.perf_counter()
    censor_c = calibrated_c(design)
    logger.info('Censoring bound c = %.6g for %.0f%% censoring under %s',
                censor_c, 100 * design.censor_rate_target, design.error.kind)
    sigma_star = efficiency_bound(design.error, design.n, censor_c, design.censoring_scale)

    _, streams = study_streams(design)
    jobs = [(design, censor_c, stream, index) for index, stream in enumerate(streams)]
    workers = min(worker_count(design.workers), design.n_reps)
    logger.info('Running %d replications of n=%d on %d worker(s)', design.n_reps, design.n, workers)
    if workers == 1:
        results = [_run_replication(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replication, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    summary = _summarize(design, censor_c, sigma_star, results)
    logger.info('Study finished in %.1f s (%d failed fits)', time.perf_counter() - started,
                summary.n_failed_fits)
    return summary
