"""Per-column continuous univariate flows.

Each continuous column gets one free spline parameter vector; the forward
direction of the spline approximates the column's quantile function and the
inverse acts as its CDF.  Fitting maximizes the log-density of the data,
i.e. the log-derivative of the inverse map.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import jax.numpy as jnp

from .errors import ConfigurationError, DataError, DegenerateDataError
from .gradients import FitSettings, ParamVector, fit_maximum_likelihood
from .splines import (
    NormalizedSpline,
    RawSplineParams,
    SaturationCounter,
    inverse_map,
    normalize_knots,
    normalize_params,
    rq_forward,
    rq_inverse,
)

BOUNDS_MARGIN = 0.05  # support padding as a fraction of the observed range


@dataclass(frozen=True)
class MarginalFitConfig:
    """Hyperparameters for fitting one continuous column."""

    k_bins: int = 512
    epochs: int = 100
    batch_size: int = 1024
    learning_rate: float = 1e-3
    val_fraction: float = 0.1
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k_bins < 2:
            raise ConfigurationError("k_bins must be >= 2")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in (0, 1)")


@dataclass(eq=False)
class MarginalFlowModel:
    """Fitted quantile map for one continuous column.

    Immutable by convention once fitted; `saturation_count` is a diagnostics
    tally of out-of-bounds evaluations and is the only mutable piece.
    """

    params: RawSplineParams
    column_id: str
    data_bounds: tuple[float, float]
    saturation_count: int = 0

    @cached_property
    def spline(self) -> NormalizedSpline:
        return normalize_params(self.params)

    def _count(self, counter: SaturationCounter):
        self.saturation_count += counter.count

    def cdf(self, x):
        """Map data values to [0, 1]; out-of-bounds values clamp to 0/1."""
        counter = SaturationCounter()
        u, _ = rq_inverse(self.spline, x, counter)
        self._count(counter)
        return u

    def quantile(self, u):
        """Map probabilities in [0, 1] back to data space."""
        u_arr = np.asarray(u, dtype=np.float64)
        if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
            raise ValueError("quantile argument outside [0, 1]")
        x, _ = rq_forward(self.spline, u)
        return x

    def logpdf(self, x):
        """Log-density at x: the log-derivative of the CDF map."""
        counter = SaturationCounter()
        _, logd = rq_inverse(self.spline, x, counter)
        self._count(counter)
        return logd


def infer_bounds(samples: np.ndarray,
                 margin: float = BOUNDS_MARGIN) -> tuple[float, float]:
    """Support for the fitted density: the observed range padded by
    `margin` times the range on each side."""
    lo = float(samples.min())
    hi = float(samples.max())
    span = hi - lo
    return lo - margin * span, hi + margin * span


def fit_marginal(samples, config: MarginalFitConfig | None = None,
                 column_id: str = "x",
                 bounds: tuple[float, float] | None = None):
    """Fit a spline flow to one continuous column by maximum likelihood.

    Returns (model, trace).  Training starts from the affine map over the
    inferred bounds (a valid density from step zero) and keeps the best
    validation checkpoint.
    """
    config = config or MarginalFitConfig()
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if np.any(np.isnan(samples)):
        raise DataError(f"column {column_id!r} contains NaN")
    if not np.all(np.isfinite(samples)):
        raise DataError(f"column {column_id!r} contains non-finite values")
    if samples.size < 10:
        raise DataError(
            f"column {column_id!r} has {samples.size} samples; need >= 10")
    if samples.min() == samples.max():
        raise DegenerateDataError(
            f"column {column_id!r} is constant; model it as a discrete column")

    if bounds is None:
        bounds = infer_bounds(samples)
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (lo < samples.min() and samples.max() < hi):
        raise DataError(
            f"column {column_id!r}: bounds ({lo}, {hi}) must strictly contain "
            f"the data range ({samples.min()}, {samples.max()})")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(samples.size)
    n_val = max(1, int(round(samples.size * config.val_fraction)))
    val = samples[perm[:n_val]]
    train = samples[perm[n_val:]]

    k = config.k_bins
    params0 = ParamVector.from_blocks({
        "widths_raw": np.zeros(k),
        "heights_raw": np.zeros(k),
        "slopes_raw": np.zeros(k + 1),
    })

    def nll(values, batch):
        ku, ky, kd = normalize_knots(values[:k], values[k:2 * k],
                                     values[2 * k:])
        _, logd, _ = inverse_map(ku, ky, kd, lo, hi, batch)
        return -jnp.mean(logd)

    settings = FitSettings(epochs=config.epochs, batch_size=config.batch_size,
                           learning_rate=config.learning_rate,
                           patience=config.patience,
                           shuffle_seed=config.seed)
    best, trace = fit_maximum_likelihood(nll, params0, train, val, settings)

    raw = RawSplineParams(best.block("widths_raw"), best.block("heights_raw"),
                          best.block("slopes_raw"), (lo, hi))
    model = MarginalFlowModel(params=raw, column_id=column_id,
                              data_bounds=(lo, hi))
    return model, trace
