"""Monotone rational-quadratic spline primitive.

A spline is a strictly increasing map from [0, 1] onto an output interval
(b_lower, b_upper), assembled from K rational-quadratic bins in the
Gregory-Delbourgo form.  The forward direction is a quantile-style map; the
inverse plays the role of a CDF.  Unconstrained parameter vectors (K widths,
K heights, K+1 slopes) are squashed into valid knot geometry by
`normalize_knots`; all-zero raw parameters yield the affine map between the
input and output intervals.

Internally the spline lives on the unit square: knot heights are normalized
to [0, 1] and the affine stretch onto (b_lower, b_upper) is applied outside
the rational-quadratic core.  Out-of-range inputs are clamped to the nearest
boundary and contribute zero parameter gradient.

All arithmetic is float64.  The jnp-level functions (`normalize_knots`,
`unit_forward`, `unit_inverse`, `forward_map`, `inverse_map`) are pure,
batch-broadcastable, and differentiable; they are the building blocks for the
training losses elsewhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import jax
import jax.numpy as jnp

from .errors import ConfigurationError, ParameterError

MIN_BIN_FRACTION = 1e-3
MIN_DERIVATIVE = 1e-3

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class RawSplineParams:
    """Unconstrained spline parameters plus output bounds.

    widths_raw and heights_raw have length K (number of bins), slopes_raw has
    length K+1 (one slope per knot).  Entries must be finite; K >= 2.
    """

    widths_raw: np.ndarray
    heights_raw: np.ndarray
    slopes_raw: np.ndarray
    bounds: tuple[float, float]

    def __post_init__(self):
        w = np.asarray(self.widths_raw, dtype=np.float64)
        h = np.asarray(self.heights_raw, dtype=np.float64)
        s = np.asarray(self.slopes_raw, dtype=np.float64)
        object.__setattr__(self, "widths_raw", w)
        object.__setattr__(self, "heights_raw", h)
        object.__setattr__(self, "slopes_raw", s)
        if w.ndim != 1:
            raise ConfigurationError("widths_raw must be a 1-d vector")
        k = w.shape[0]
        if k < 2:
            raise ConfigurationError(f"spline needs at least 2 bins, got {k}")
        if h.shape != (k,):
            raise ConfigurationError(
                f"heights_raw must have length {k}, got {h.shape}")
        if s.shape != (k + 1,):
            raise ConfigurationError(
                f"slopes_raw must have length {k + 1}, got {s.shape}")
        for name, vec in (("widths_raw", w), ("heights_raw", h),
                          ("slopes_raw", s)):
            if not np.all(np.isfinite(vec)):
                raise ParameterError(f"{name} contains non-finite entries")
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise ParameterError(f"invalid bounds ({lo}, {hi})")
        object.__setattr__(self, "bounds", (lo, hi))

    @property
    def k_bins(self) -> int:
        return self.widths_raw.shape[0]

    @classmethod
    def zeros(cls, k_bins: int, bounds: tuple[float, float]) -> "RawSplineParams":
        """All-zero parameters: the affine map onto `bounds`."""
        return cls(np.zeros(k_bins), np.zeros(k_bins), np.zeros(k_bins + 1),
                   bounds)


@dataclass(frozen=True)
class NormalizedSpline:
    """Valid knot geometry: strictly increasing knots and positive slopes.

    knot_u spans [0, 1]; knot_x spans [b_lower, b_upper]; knot_y is knot_x
    rescaled to the unit square (the representation the evaluators use);
    deriv holds the K+1 knot slopes on the unit square, each >= the
    derivative floor.  Immutable after construction; evaluation is read-only
    and safe to share across threads.
    """

    knot_u: np.ndarray
    knot_x: np.ndarray
    knot_y: np.ndarray
    deriv: np.ndarray
    bounds: tuple[float, float]

    @property
    def k_bins(self) -> int:
        return self.knot_u.shape[0] - 1


class SaturationCounter:
    """Tally of inputs that had to be clamped back to the spline's range."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)


def normalize_knots(widths_raw, heights_raw, slopes_raw,
                    min_bin_fraction: float = MIN_BIN_FRACTION,
                    min_derivative: float = MIN_DERIVATIVE):
    """Squash raw parameter vectors into unit-square knot geometry.

    Widths and heights pass through a softmax with a floor of
    `min_bin_fraction` per bin; slopes pass through a rescaled softplus with
    a floor of `min_derivative`, normalized so zero maps to slope 1.  Accepts
    arbitrary leading batch dimensions; the last axis is the bin axis.

    Returns (knot_u, knot_y, deriv) with last-axis length K+1.
    Differentiable in all three inputs.
    """
    k = widths_raw.shape[-1]
    w = jax.nn.softmax(widths_raw, axis=-1)
    w = min_bin_fraction + (1.0 - min_bin_fraction * k) * w
    h = jax.nn.softmax(heights_raw, axis=-1)
    h = min_bin_fraction + (1.0 - min_bin_fraction * k) * h
    deriv = min_derivative + (1.0 - min_derivative) * (
        jax.nn.softplus(slopes_raw) / _LOG2)
    return _cumulative_knots(w), _cumulative_knots(h), deriv


def _cumulative_knots(bin_sizes):
    csum = jnp.cumsum(bin_sizes, axis=-1)
    csum = csum / csum[..., -1:]  # force the final knot to exactly 1.0
    zero = jnp.zeros_like(csum[..., :1])
    return jnp.concatenate([zero, csum], axis=-1)


def _bin_index(knots, q):
    """Index of the bin containing q; points on a knot go to the right bin."""
    if knots.ndim == 1:
        idx = jnp.searchsorted(knots, q, side="right") - 1
    else:
        idx = jnp.sum(q[..., None] >= knots[..., 1:], axis=-1)
    return jnp.clip(idx, 0, knots.shape[-1] - 2)


def _take(knots, idx):
    if knots.ndim == 1:
        return knots[idx]
    return jnp.take_along_axis(knots, idx[..., None], axis=-1)[..., 0]


def _bin_geometry(knot_u, knot_y, deriv, idx):
    u0 = _take(knot_u, idx)
    u1 = _take(knot_u, idx + 1)
    y0 = _take(knot_y, idx)
    y1 = _take(knot_y, idx + 1)
    d0 = _take(deriv, idx)
    d1 = _take(deriv, idx + 1)
    w = u1 - u0
    h = y1 - y0
    return u0, y0, w, h, h / w, d0, d1


def unit_forward(knot_u, knot_y, deriv, u):
    """Rational-quadratic map [0,1] -> [0,1]; returns (y, log dy/du).

    `u` is assumed already clipped to [0, 1]; endpoints map exactly to 0
    and 1.  Knot arrays may carry leading batch dimensions matching `u`.
    """
    idx = _bin_index(knot_u, u)
    u0, y0, w, h, s, d0, d1 = _bin_geometry(knot_u, knot_y, deriv, idx)
    theta = (u - u0) / w
    om = 1.0 - theta
    den = s + (d1 + d0 - 2.0 * s) * theta * om
    y = y0 + h * (s * theta * theta + d0 * theta * om) / den
    dyu = s * s * (d1 * theta * theta + 2.0 * s * theta * om + d0 * om * om) \
        / (den * den)
    y = jnp.where(u <= 0.0, 0.0, jnp.where(u >= 1.0, 1.0, y))
    return y, jnp.log(dyu)


def unit_inverse(knot_u, knot_y, deriv, y):
    """Inverse of `unit_forward`; returns (u, log du/dy).

    Uses the numerically stable root of the per-bin quadratic (the 2c /
    (-b - sqrt(b^2 - 4ac)) form) so forward/inverse round trips hold to
    ~1e-12 in float64.
    """
    idx = _bin_index(knot_y, y)
    u0, y0, w, h, s, d0, d1 = _bin_geometry(knot_u, knot_y, deriv, idx)
    dy = y - y0
    coef = d1 + d0 - 2.0 * s
    a = h * (s - d0) + dy * coef
    b = h * d0 - dy * coef
    c = -s * dy
    disc = jnp.maximum(b * b - 4.0 * a * c, 0.0)
    theta = 2.0 * c / (-b - jnp.sqrt(disc))
    om = 1.0 - theta
    den = s + coef * theta * om
    dyu = s * s * (d1 * theta * theta + 2.0 * s * theta * om + d0 * om * om) \
        / (den * den)
    u = u0 + theta * w
    u = jnp.where(y <= 0.0, 0.0, jnp.where(y >= 1.0, 1.0, u))
    return u, -jnp.log(dyu)


def forward_map(knot_u, knot_y, deriv, lo, hi, u):
    """Full forward map [0,1] -> [lo,hi] with clamping.

    Returns (x, log dx/du, in_bounds).  Out-of-range u is clamped to the
    nearest endpoint; clamped entries carry zero parameter gradient.
    """
    inb = (u >= 0.0) & (u <= 1.0)
    y, logd = unit_forward(knot_u, knot_y, deriv, jnp.clip(u, 0.0, 1.0))
    scale = hi - lo
    x = lo + scale * y
    x = jnp.where(u <= 0.0, lo, jnp.where(u >= 1.0, hi, x))
    logd = logd + jnp.log(scale)
    x = jnp.where(inb, x, jax.lax.stop_gradient(x))
    logd = jnp.where(inb, logd, jax.lax.stop_gradient(logd))
    return x, logd, inb


def inverse_map(knot_u, knot_y, deriv, lo, hi, x):
    """Full inverse map [lo,hi] -> [0,1] with clamping.

    Returns (u, log du/dx, in_bounds); same clamping contract as
    `forward_map`.
    """
    inb = (x >= lo) & (x <= hi)
    scale = hi - lo
    y = jnp.clip((x - lo) / scale, 0.0, 1.0)
    u, logd = unit_inverse(knot_u, knot_y, deriv, y)
    u = jnp.where(x <= lo, 0.0, jnp.where(x >= hi, 1.0, u))
    logd = logd - jnp.log(scale)
    u = jnp.where(inb, u, jax.lax.stop_gradient(u))
    logd = jnp.where(inb, logd, jax.lax.stop_gradient(logd))
    return u, logd, inb


def normalize_params(raw: RawSplineParams,
                     min_bin_fraction: float = MIN_BIN_FRACTION,
                     min_derivative: float = MIN_DERIVATIVE) -> NormalizedSpline:
    """Validate raw parameters and produce the normalized knot geometry."""
    if not 0.0 < min_bin_fraction * raw.k_bins < 1.0:
        raise ConfigurationError(
            f"min_bin_fraction {min_bin_fraction} too large for K={raw.k_bins}")
    if not 0.0 < min_derivative < 1.0:
        raise ConfigurationError(f"invalid min_derivative {min_derivative}")
    ku, ky, kd = normalize_knots(raw.widths_raw, raw.heights_raw,
                                 raw.slopes_raw, min_bin_fraction,
                                 min_derivative)
    ku = np.asarray(ku)
    ky = np.asarray(ky)
    kd = np.asarray(kd)
    lo, hi = raw.bounds
    kx = lo + (hi - lo) * ky
    kx[0] = lo
    kx[-1] = hi
    spline = NormalizedSpline(knot_u=ku, knot_x=kx, knot_y=ky, deriv=kd,
                              bounds=raw.bounds)
    _check_normalized(spline)
    return spline


def _check_normalized(spline: NormalizedSpline):
    if not (np.all(np.diff(spline.knot_u) > 0)
            and np.all(np.diff(spline.knot_x) > 0)):
        raise ParameterError("normalized knots are not strictly increasing")
    if not np.all(spline.deriv > 0):
        raise ParameterError("normalized derivatives are not strictly positive")


def rq_forward(spline: NormalizedSpline, u, counter: SaturationCounter | None = None):
    """Quantile-direction evaluation: u in [0,1] -> (x, log dx/du).

    Scalar or array input.  Out-of-range inputs are clamped and, when a
    counter is supplied, tallied.
    """
    u_arr = jnp.asarray(u, dtype=jnp.float64)
    lo, hi = spline.bounds
    x, logd, inb = forward_map(spline.knot_u, spline.knot_y, spline.deriv,
                               lo, hi, u_arr)
    if counter is not None:
        counter.add(int(jnp.size(inb) - jnp.sum(inb)))
    if np.ndim(u) == 0:
        return float(x), float(logd)
    return np.asarray(x), np.asarray(logd)


def rq_inverse(spline: NormalizedSpline, x, counter: SaturationCounter | None = None):
    """CDF-direction evaluation: x in [b_lower,b_upper] -> (u, log du/dx)."""
    x_arr = jnp.asarray(x, dtype=jnp.float64)
    lo, hi = spline.bounds
    u, logd, inb = inverse_map(spline.knot_u, spline.knot_y, spline.deriv,
                               lo, hi, x_arr)
    if counter is not None:
        counter.add(int(jnp.size(inb) - jnp.sum(inb)))
    if np.ndim(x) == 0:
        return float(u), float(logd)
    return np.asarray(u), np.asarray(logd)


@dataclass(frozen=True)
class SplineParamGradients:
    """Partials of the map output and of its log-derivative with respect to
    each raw parameter block."""

    d_output: dict
    d_log_deriv: dict


def rq_param_gradients(raw: RawSplineParams, point, direction: str = "forward",
                       min_bin_fraction: float = MIN_BIN_FRACTION,
                       min_derivative: float = MIN_DERIVATIVE) -> SplineParamGradients:
    """Exact partials of (output, log_deriv) w.r.t. the raw parameter vectors.

    direction 'forward' treats `point` as u; 'inverse' treats it as x.
    Computed by reverse-mode differentiation of the evaluation graph, so the
    values match the analytic derivatives to machine precision.  Clamped
    (out-of-range) points return all-zero gradients.
    """
    if direction not in ("forward", "inverse"):
        raise ConfigurationError(f"unknown direction {direction!r}")
    lo, hi = raw.bounds

    def evaluate(w_raw, h_raw, s_raw, pt):
        ku, ky, kd = normalize_knots(w_raw, h_raw, s_raw, min_bin_fraction,
                                     min_derivative)
        if direction == "forward":
            out, logd, _ = forward_map(ku, ky, kd, lo, hi, pt)
        else:
            out, logd, _ = inverse_map(ku, ky, kd, lo, hi, pt)
        return out, logd

    grad_out = jax.grad(lambda w, h, s, p: evaluate(w, h, s, p)[0],
                        argnums=(0, 1, 2))
    grad_logd = jax.grad(lambda w, h, s, p: evaluate(w, h, s, p)[1],
                         argnums=(0, 1, 2))

    pt = jnp.asarray(point, dtype=jnp.float64)
    args = (jnp.asarray(raw.widths_raw), jnp.asarray(raw.heights_raw),
            jnp.asarray(raw.slopes_raw))
    if pt.ndim == 0:
        go = grad_out(*args, pt)
        gl = grad_logd(*args, pt)
    else:
        go = jax.vmap(grad_out, in_axes=(None, None, None, 0))(*args, pt)
        gl = jax.vmap(grad_logd, in_axes=(None, None, None, 0))(*args, pt)
    names = ("widths_raw", "heights_raw", "slopes_raw")
    return SplineParamGradients(
        d_output={n: np.asarray(g) for n, g in zip(names, go)},
        d_log_deriv={n: np.asarray(g) for n, g in zip(names, gl)},
    )
