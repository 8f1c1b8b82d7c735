"""Seeded synthetic data generators used as training and evaluation fixtures.

Bivariate copula samplers (Gaussian via correlated normals, Archimedean
families via the conditional-distribution method), their closed-form
log-densities (the oracles the flow fits are judged against), the two-rings
point cloud, and a three-variable mixed continuous/discrete vine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma as gamma_dist
from scipy.stats import halfnorm, hypergeom, norm

from .data import ColumnSpec, Dataset, Schema
from .discrete import build_codec
from .errors import ConfigurationError

COPULA_FAMILIES = ("gaussian", "clayton", "gumbel", "frank", "independence")

_EDGE = 1e-12


@dataclass(frozen=True)
class CopulaSpec:
    """A parametric bivariate copula family: rho for gaussian, theta for
    the Archimedean families."""

    family: str
    parameter: float = 0.0

    def __post_init__(self):
        if self.family not in COPULA_FAMILIES:
            raise ConfigurationError(f"unknown copula family {self.family!r}")
        p = float(self.parameter)
        if self.family == "gaussian" and not -1.0 < p < 1.0:
            raise ConfigurationError(f"gaussian rho must be in (-1,1), got {p}")
        if self.family == "clayton" and p <= 0.0:
            raise ConfigurationError(f"clayton theta must be > 0, got {p}")
        if self.family == "gumbel" and p < 1.0:
            raise ConfigurationError(f"gumbel theta must be >= 1, got {p}")
        if self.family == "frank" and p == 0.0:
            raise ConfigurationError("frank theta must be nonzero")
        object.__setattr__(self, "parameter", p)

    @property
    def kendall_tau(self) -> float:
        """Closed-form rank correlation (not available for frank)."""
        if self.family == "gaussian":
            return 2.0 / np.pi * np.arcsin(self.parameter)
        if self.family == "clayton":
            return self.parameter / (self.parameter + 2.0)
        if self.family == "gumbel":
            return 1.0 - 1.0 / self.parameter
        if self.family == "independence":
            return 0.0
        raise ConfigurationError(f"no closed-form tau for {self.family}")


def _clip01(u):
    return np.clip(u, _EDGE, 1.0 - _EDGE)


# conditional CDFs h(u | v) and their inverses in u ------------------------

def _h_gaussian(u, v, rho):
    x, y = norm.ppf(_clip01(u)), norm.ppf(_clip01(v))
    return norm.cdf((x - rho * y) / np.sqrt(1.0 - rho ** 2))


def _hinv_gaussian(w, v, rho):
    y = norm.ppf(_clip01(v))
    return norm.cdf(np.sqrt(1.0 - rho ** 2) * norm.ppf(_clip01(w)) + rho * y)


def _h_clayton(u, v, theta):
    u, v = _clip01(u), _clip01(v)
    return v ** (-theta - 1.0) * (u ** -theta + v ** -theta - 1.0) \
        ** (-1.0 / theta - 1.0)


def _hinv_clayton(w, v, theta):
    w, v = _clip01(w), _clip01(v)
    inner = (w * v ** (theta + 1.0)) ** (-theta / (theta + 1.0)) \
        - v ** -theta + 1.0
    return inner ** (-1.0 / theta)


def _h_gumbel(u, v, theta):
    u, v = _clip01(u), _clip01(v)
    a = (-np.log(u)) ** theta + (-np.log(v)) ** theta
    c = np.exp(-a ** (1.0 / theta))
    return c / v * (-np.log(v)) ** (theta - 1.0) * a ** (1.0 / theta - 1.0)


def _hinv_gumbel(w, v, theta):
    # no closed form: monotone bisection to ~1e-15
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lo = np.full_like(w, _EDGE)
    hi = np.full_like(w, 1.0 - _EDGE)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = _h_gumbel(mid, v, theta) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _h_frank(u, v, theta):
    u, v = _clip01(u), _clip01(v)
    a = np.expm1(-theta * u)
    b = np.expm1(-theta * v)
    k = np.expm1(-theta)
    return np.exp(-theta * v) * a / (k + a * b)


def _hinv_frank(w, v, theta):
    w, v = _clip01(w), _clip01(v)
    b = np.expm1(-theta * v)
    k = np.expm1(-theta)
    a = w * k / (np.exp(-theta * v) - w * b)
    return _clip01(-np.log1p(a) / theta)


_H = {"gaussian": _h_gaussian, "clayton": _h_clayton,
      "gumbel": _h_gumbel, "frank": _h_frank}
_HINV = {"gaussian": _hinv_gaussian, "clayton": _hinv_clayton,
         "gumbel": _hinv_gumbel, "frank": _hinv_frank}


def sample_bivariate_copula(spec: CopulaSpec, n: int, seed: int = 0) -> np.ndarray:
    """Exact n x 2 sample with uniform margins.

    Gaussian goes through correlated normals; the Archimedean families use
    the conditional-distribution method u2 = h^{-1}(w | u1).
    """
    rng = np.random.default_rng(seed)
    if spec.family == "independence":
        return rng.uniform(size=(n, 2))
    if spec.family == "gaussian":
        rho = spec.parameter
        z = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]],
                                    size=n)
        return norm.cdf(z)
    u1 = rng.uniform(size=n)
    w = rng.uniform(size=n)
    u2 = _HINV[spec.family](w, u1, spec.parameter)
    return np.column_stack([u1, u2])


def copula_logdensity_analytic(spec: CopulaSpec, u, v):
    """Closed-form log c(u, v); inputs clamped away from the boundary."""
    u = _clip01(np.asarray(u, dtype=np.float64))
    v = _clip01(np.asarray(v, dtype=np.float64))
    family, p = spec.family, spec.parameter
    if family == "independence":
        return np.zeros(np.broadcast(u, v).shape)
    if family == "gaussian":
        x, y = norm.ppf(u), norm.ppf(v)
        r2 = 1.0 - p ** 2
        return (-0.5 * np.log(r2)
                - (p ** 2 * (x ** 2 + y ** 2) - 2.0 * p * x * y) / (2.0 * r2))
    if family == "clayton":
        log_sum = np.log(u ** -p + v ** -p - 1.0)
        return (np.log1p(p) - (p + 1.0) * (np.log(u) + np.log(v))
                - (2.0 + 1.0 / p) * log_sum)
    if family == "gumbel":
        lu, lv = -np.log(u), -np.log(v)
        a = lu ** p + lv ** p
        a_pow = a ** (1.0 / p)
        return (-a_pow - np.log(u) - np.log(v)
                + (p - 1.0) * (np.log(lu) + np.log(lv))
                + (1.0 / p - 2.0) * np.log(a)
                + np.log(a_pow + p - 1.0))
    # frank: denominator is (1-e^-t) - (1-e^-tu)(1-e^-tv) = -(k + a*b)
    # with k = expm1(-t), a = expm1(-tu), b = expm1(-tv)
    d = np.expm1(-p) + np.expm1(-p * u) * np.expm1(-p * v)
    return (np.log(p * -np.expm1(-p)) - p * (u + v)
            - 2.0 * np.log(np.abs(d)))


TWO_RINGS_RADII = (1.0, 2.0)
TWO_RINGS_NOISE = 0.1


def gen_two_rings(n: int, seed: int = 0) -> Dataset:
    """Points on two concentric circles (radii 1 and 2, equal probability)
    with radial Gaussian noise and uniform angle."""
    rng = np.random.default_rng(seed)
    ring = rng.integers(0, 2, size=n)
    radius = np.asarray(TWO_RINGS_RADII)[ring] \
        + TWO_RINGS_NOISE * rng.normal(size=n)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    schema = Schema((ColumnSpec("x1", "continuous"),
                     ColumnSpec("x2", "continuous")))
    return Dataset(schema,
                   {"x1": radius * np.cos(angle),
                    "x2": radius * np.sin(angle)},
                   {})


MIXED_VINE_RHO = 0.7
MIXED_VINE_CLAYTON = 2.0
MIXED_VINE_GUMBEL = 2.0
HYPERGEOM_PARAMS = (20, 7, 12)  # population, successes, draws


def gen_mixed_vine(n: int, seed: int = 0, rho: float = MIXED_VINE_RHO,
                   theta_clayton: float = MIXED_VINE_CLAYTON,
                   theta_gumbel: float = MIXED_VINE_GUMBEL) -> Dataset:
    """Three mixed-type columns as a D-vine with order X1-X2-X3.

    Pair structure: (X1,X2) Gaussian, (X2,X3) Clayton, (X1,X3 | X2) Gumbel.
    Marginals: X1 half-normal (scale 1), X2 hypergeometric, X3 gamma
    (shape 2, scale 1).  The copula and marginal parameters are fixture
    defaults, config-exposed through the keyword arguments.
    """
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(n, 3))
    u1 = w[:, 0]
    u2 = _hinv_gaussian(w[:, 1], u1, rho)
    cond_1_given_2 = _h_gaussian(u1, u2, rho)
    t = _hinv_gumbel(w[:, 2], cond_1_given_2, theta_gumbel)
    u3 = _hinv_clayton(t, u2, theta_clayton)

    x1 = halfnorm(scale=1.0).ppf(u1)
    x2 = hypergeom(*HYPERGEOM_PARAMS).ppf(_clip01(u2)).astype(np.int64)
    x3 = gamma_dist(a=2.0, scale=1.0).ppf(u3)

    schema = Schema((ColumnSpec("x1", "continuous"),
                     ColumnSpec("x2", "ordinal"),
                     ColumnSpec("x3", "continuous")))
    codec = build_codec(x2, kind="ordinal")
    return Dataset(schema,
                   {"x1": x1, "x2": codec.encode(x2), "x3": x3},
                   {"x2": codec})
