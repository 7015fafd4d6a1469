"""The six error laws of the simulation study, with their hazard functions.

Each law is a finite mixture of scipy.stats location-scale components; single laws are
one-component mixtures. Hazard quantities are computed on the log scale so the tails
stay finite.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from src.errors import UnknownDistributionError

EULER_GAMMA = float(np.euler_gamma)

# kind -> [(weight, family, loc, scale)]
_COMPONENTS: Dict[str, List[Tuple[float, str, float, float]]] = {
    'std_normal': [(1.0, 'normal', 0.0, 1.0)],
    'std_extreme_value': [(1.0, 'extreme_value', 0.0, 1.0)],
    'mix_05_N01_N09': [(0.5, 'normal', 0.0, 1.0), (0.5, 'normal', 0.0, 3.0)],
    'mix_095_N01_N09': [(0.95, 'normal', 0.0, 1.0), (0.05, 'normal', 0.0, 3.0)],
    'gumbel_half': [(1.0, 'gumbel', -0.5 * EULER_GAMMA, 0.5)],
    'mix_shifted_normal': [(0.5, 'normal', 0.0, 1.0), (0.5, 'normal', -1.0, 0.5)],
}

DISTRIBUTION_KEYS = {
    'a': 'std_normal',
    'b': 'std_extreme_value',
    'c': 'mix_05_N01_N09',
    'd': 'mix_095_N01_N09',
    'e': 'gumbel_half',
    'f': 'mix_shifted_normal',
}

_FAMILIES = {
    'normal': stats.norm,
    # Minimum extreme value: F(t) = 1 - exp(-e^t), log-hazard g(t) = t.
    'extreme_value': stats.gumbel_l,
    # Maximum Gumbel: mean = loc + scale * Euler's constant.
    'gumbel': stats.gumbel_r,
}


def _dlogpdf(family: str, z: np.ndarray, scale: float) -> np.ndarray:
    """d/dt log f for a standardized argument z = (t - loc) / scale."""
    if family == 'normal':
        return -z / scale
    if family == 'extreme_value':
        return (1.0 - np.exp(z)) / scale
    return (np.exp(-z) - 1.0) / scale


@dataclass(frozen=True)
class ErrorDistribution:
    """One of the six error laws e0 of the simulation design."""

    kind: str

    def __post_init__(self):
        if self.kind not in _COMPONENTS:
            raise UnknownDistributionError(
                f'unknown error distribution {self.kind!r}; expected one of {sorted(_COMPONENTS)}'
            )

    @classmethod
    def from_key(cls, key: str) -> 'ErrorDistribution':
        """Build from a table label 'a'..'f' or from a kind name."""
        if key in DISTRIBUTION_KEYS:
            return cls(DISTRIBUTION_KEYS[key])
        return cls(key)

    @property
    def key(self) -> str:
        return next(k for k, v in DISTRIBUTION_KEYS.items() if v == self.kind)

    @property
    def components(self) -> List[Tuple[float, str, float, float]]:
        return _COMPONENTS[self.kind]

    def _frozen(self):
        return [(w, family, loc, scale, _FAMILIES[family](loc=loc, scale=scale))
                for w, family, loc, scale in self.components]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        parts = self._frozen()
        if len(parts) == 1:
            return parts[0][4].rvs(size=size, random_state=rng)
        weights = np.array([p[0] for p in parts])
        label = rng.choice(len(parts), size=size, p=weights)
        draws = np.empty(size)
        for k, part in enumerate(parts):
            chosen = label == k
            draws[chosen] = part[4].rvs(size=int(chosen.sum()), random_state=rng)
        return draws

    def _log_terms(self, t: np.ndarray):
        parts = self._frozen()
        log_w = np.log([p[0] for p in parts])[:, None]
        logpdf = np.vstack([p[4].logpdf(t) for p in parts]) + log_w
        logsf = np.vstack([p[4].logsf(t) for p in parts]) + log_w
        dlog = np.vstack([_dlogpdf(p[1], (t - p[2]) / p[3], p[3]) for p in parts])
        return logpdf, logsf, dlog

    def logpdf(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return logsumexp(self._log_terms(t)[0], axis=0)

    def pdf(self, t) -> np.ndarray:
        return np.exp(self.logpdf(t))

    def logsf(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return logsumexp(self._log_terms(t)[1], axis=0)

    def sf(self, t) -> np.ndarray:
        return np.exp(self.logsf(t))

    def cdf(self, t) -> np.ndarray:
        return -np.expm1(self.logsf(t))

    def log_hazard(self, t) -> np.ndarray:
        """g0(t) = log f(t) - log S(t)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        logpdf, logsf, _ = self._log_terms(t)
        return logsumexp(logpdf, axis=0) - logsumexp(logsf, axis=0)

    def hazard(self, t) -> np.ndarray:
        return np.exp(self.log_hazard(t))

    def dlog_hazard(self, t) -> np.ndarray:
        """g0'(t) = f'(t)/f(t) + lambda0(t)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        logpdf, logsf, dlog = self._log_terms(t)
        log_f = logsumexp(logpdf, axis=0)
        posterior = np.exp(logpdf - log_f)
        return (posterior * dlog).sum(axis=0) + np.exp(log_f - logsumexp(logsf, axis=0))

    def mean(self) -> float:
        return float(sum(w * _FAMILIES[f](loc=loc, scale=s).mean()
                         for w, f, loc, s in self.components))

    def var(self) -> float:
        second = sum(w * (_FAMILIES[f](loc=loc, scale=s).var() + _FAMILIES[f](loc=loc, scale=s).mean() ** 2)
                     for w, f, loc, s in self.components)
        return float(second - self.mean() ** 2)

    def survival_quantile(self, p: float) -> float:
        """t with S(t) = p."""
        target = np.log(p)
        lo, hi = -1.0, 1.0
        while self.logsf(lo)[0] < target:
            lo *= 2.0
        while self.logsf(hi)[0] > target:
            hi *= 2.0
        return float(optimize.brentq(lambda t: self.logsf(t)[0] - target, lo, hi, xtol=1e-12))

    def lower_quantile(self, p: float) -> float:
        """t with F(t) = p."""
        lo, hi = -1.0, 1.0
        while self.cdf(lo)[0] > p:
            lo *= 2.0
        while self.cdf(hi)[0] < p:
            hi *= 2.0
        return float(optimize.brentq(lambda t: self.cdf(t)[0] - p, lo, hi, xtol=1e-12))
