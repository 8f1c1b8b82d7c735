"""Flow-based models for ordinal and categorical columns.

Labels are encoded as integer codes; a latent spline flow over the interval
(-1, n-1) assigns each code k the half-open cell (k-1, k].  The inverse of
the latent spline is a continuous CDF, so the cell mass F(k) - F(k-1) is a
proper pmf, generation is ceiling-rounding of the latent flow output, and
the stochastic distributional transform turns a code plus an auxiliary
uniform draw into a continuous uniform marginal for copula training.
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
    normalize_knots,
    normalize_params,
    rq_forward,
    unit_inverse,
)

MIN_DISCRETE_BINS = 32
BINS_PER_CLASS = 4


@dataclass(frozen=True)
class CategoryCodec:
    """Deterministic bijection between raw labels and codes 0..n-1.

    Categorical labels are ordered lexicographically (as strings); ordinal
    labels numerically.  The same codec must be used for training and
    generation, so it is serialized with the model.
    """

    classes: tuple

    def __post_init__(self):
        if len(self.classes) < 2:
            raise DegenerateDataError(
                "codec needs at least 2 classes; model a single-class column "
                "as a constant")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("codec classes must be distinct")
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @cached_property
    def to_code(self) -> dict:
        return {label: code for code, label in enumerate(self.classes)}

    def encode(self, labels) -> np.ndarray:
        table = self.to_code
        out = np.empty(len(labels), dtype=np.int64)
        for i, label in enumerate(labels):
            try:
                out[i] = table[label]
            except KeyError:
                raise DataError(f"label {label!r} not present in codec") from None
        return out

    def decode(self, codes) -> list:
        codes = np.asarray(codes)
        if codes.size and (codes.min() < 0 or codes.max() >= self.n_classes):
            raise DataError("code outside codec range")
        return [self.classes[int(c)] for c in codes]


def build_codec(raw_column, kind: str = "categorical") -> CategoryCodec:
    """Build a codec from observed labels.

    kind 'ordinal' sorts numerically and stores integer classes; anything
    else sorts the labels lexicographically as strings.
    """
    labels = list(raw_column)
    if not labels:
        raise DataError("empty column")
    if kind == "ordinal":
        classes = sorted({int(v) for v in labels})
    else:
        classes = sorted({str(v) for v in labels})
    return CategoryCodec(tuple(classes))


@dataclass(frozen=True)
class DiscreteFitConfig:
    """Hyperparameters for fitting one discrete column.

    Defaults differ from the continuous case: near-full batches (the loss
    depends on the data only through class frequencies), a hotter learning
    rate, and a larger validation fraction so checkpoint selection is not
    dominated by the validation split's own frequency noise.
    """

    k_bins: int | None = None  # default max(4*n_classes, 32)
    epochs: int = 600
    batch_size: int = 8192
    learning_rate: float = 3e-2
    val_fraction: float = 0.25
    patience: int = 60
    seed: int = 0

    def bins_for(self, n_classes: int) -> int:
        if self.k_bins is not None:
            return self.k_bins
        return max(BINS_PER_CLASS * n_classes, MIN_DISCRETE_BINS)


@dataclass(eq=False)
class DiscreteMarginalFlow:
    """Fitted quantized flow for one discrete column.

    The latent spline maps [0, 1] onto (-1, n-1); code k owns the latent
    cell (k-1, k].
    """

    codec: CategoryCodec
    params: RawSplineParams
    column_id: str

    @cached_property
    def spline(self) -> NormalizedSpline:
        return normalize_params(self.params)

    @cached_property
    def cell_edges(self) -> np.ndarray:
        """Latent CDF evaluated at cell boundaries: edges[k] = F(k-1),
        so edges[0] = 0 and edges[n] = 1 exactly."""
        n = self.codec.n_classes
        y = (np.arange(n + 1)) / n  # unit-square images of -1, 0, ..., n-1
        u, _ = unit_inverse(jnp.asarray(self.spline.knot_u),
                            jnp.asarray(self.spline.knot_y),
                            jnp.asarray(self.spline.deriv),
                            jnp.asarray(y))
        return np.asarray(u)

    @property
    def n_classes(self) -> int:
        return self.codec.n_classes

    def pmf(self, k) -> np.ndarray | float:
        """Cell mass of code k; strictly positive by the spline floors."""
        k_arr = np.asarray(k)
        if k_arr.size and (k_arr.min() < 0 or k_arr.max() >= self.n_classes):
            raise ValueError(f"code out of range 0..{self.n_classes - 1}")
        edges = self.cell_edges
        mass = edges[k_arr + 1] - edges[k_arr]
        return float(mass) if np.ndim(k) == 0 else mass

    def pmf_vector(self) -> np.ndarray:
        edges = self.cell_edges
        return np.diff(edges)

    def logpmf(self, k):
        return np.log(self.pmf(k))

    def sample_code(self, u):
        """Generate codes from uniforms: ceiling of the latent flow output."""
        u_arr = np.asarray(u, dtype=np.float64)
        if np.any(u_arr < 0.0) or np.any(u_arr > 1.0):
            raise ValueError("sample_code argument outside [0, 1]")
        x, _ = rq_forward(self.spline, u_arr)
        codes = np.ceil(np.asarray(x)).astype(np.int64)
        codes = np.clip(codes, 0, self.n_classes - 1)
        return int(codes) if np.ndim(u) == 0 else codes

    def dist_transform(self, k, v):
        """Distributional transform: u = F(k-1) + v * (F(k) - F(k-1)).

        `v` is the caller's auxiliary uniform draw; with exact cell masses
        and random v the output is uniform on [0, 1].
        """
        k_arr = np.asarray(k)
        v_arr = np.asarray(v, dtype=np.float64)
        edges = self.cell_edges
        low = edges[k_arr]
        high = edges[k_arr + 1]
        out = low + v_arr * (high - low)
        return float(out) if (np.ndim(k) == 0 and np.ndim(v) == 0) else out


def fit_discrete(codes, codec: CategoryCodec,
                 config: DiscreteFitConfig | None = None,
                 column_id: str = "x"):
    """Fit the latent spline so cell masses maximize the code likelihood.

    Returns (model, trace).  The per-row loss is -log(F(k) - F(k-1)) with F
    the latent spline's inverse; all masses stay strictly positive.
    """
    config = config or DiscreteFitConfig()
    codes = np.asarray(codes)
    if codes.size < 2:
        raise DataError(f"column {column_id!r}: too few rows")
    if not np.issubdtype(codes.dtype, np.integer):
        raise DataError(f"column {column_id!r}: codes must be integers")
    n = codec.n_classes
    if codes.min() < 0 or codes.max() >= n:
        raise DataError(f"column {column_id!r}: codes outside 0..{n - 1}")

    k_bins = config.bins_for(n)
    if k_bins < 2:
        raise ConfigurationError("k_bins must be >= 2")
    params0 = ParamVector.from_blocks({
        "widths_raw": np.zeros(k_bins),
        "heights_raw": np.zeros(k_bins),
        "slopes_raw": np.zeros(k_bins + 1),
    })
    cell_y = jnp.arange(n + 1) / n

    def nll(values, batch):
        ku, ky, kd = normalize_knots(values[:k_bins],
                                     values[k_bins:2 * k_bins],
                                     values[2 * k_bins:])
        edges, _ = unit_inverse(ku, ky, kd, cell_y)
        log_mass = jnp.log(jnp.diff(edges))
        return -jnp.mean(log_mass[batch])

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(codes.size)
    n_val = max(1, int(round(codes.size * config.val_fraction)))
    val = codes[perm[:n_val]]
    train = codes[perm[n_val:]]
    settings = FitSettings(epochs=config.epochs, batch_size=config.batch_size,
                           learning_rate=config.learning_rate,
                           patience=config.patience,
                           shuffle_seed=config.seed)
    best, trace = fit_maximum_likelihood(nll, params0, train, val, settings)

    raw = RawSplineParams(best.block("widths_raw"), best.block("heights_raw"),
                          best.block("slopes_raw"), (-1.0, float(n - 1)))
    model = DiscreteMarginalFlow(codec=codec, params=raw, column_id=column_id)
    return model, trace
