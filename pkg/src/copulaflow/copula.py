"""Stacked masked-autoregressive conditional spline flow on [0,1]^d.

Each layer holds a masked dense network (MADE-style degree masks) that maps
the layer's output-side coordinates to per-dimension spline parameters; the
masks guarantee that dimension k's parameters depend only on coordinates
earlier in the layer's ordering, so the Jacobian is triangular and the
log-determinant is the sum of the per-dimension spline log-derivatives.

The inverse direction (density evaluation) runs all conditional CDFs of a
layer in one masked pass; the forward direction (sampling) generates the
coordinates of a layer sequentially in its ordering.  Layer orderings
alternate natural/reversed.  The final dense layer is zero-initialized, so a
fresh stack is exactly the identity: the independence structure with log
density 0 everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import jax
import jax.numpy as jnp

from .errors import ConfigurationError, DataError
from .gradients import FitSettings, ParamVector, fit_maximum_likelihood
from .splines import normalize_knots, unit_forward, unit_inverse

INPUT_CLAMP_EPS = 1e-6
NONLINEARITY = "tanh"  # recorded in the model file


@dataclass(frozen=True)
class MaskedConditioner:
    """Degree-masked dense network emitting spline parameters per dimension.

    `ordering[dim]` is the dimension's position in this layer's
    autoregressive order; the masks enforce that the parameter block of the
    dimension at position p depends only on inputs at positions < p (the
    position-0 block is bias-only).
    """

    layer_widths: tuple
    masks: tuple
    degrees: tuple
    ordering: np.ndarray

    @property
    def d(self) -> int:
        return self.layer_widths[0]


@dataclass(frozen=True)
class CopulaFlowLayer:
    conditioner: MaskedConditioner
    k_bins: int
    index: int

    @property
    def params_per_dim(self) -> int:
        return 3 * self.k_bins + 1

    def block_names(self):
        n_dense = len(self.conditioner.masks)
        for j in range(n_dense):
            yield f"layer{self.index}/w{j}", f"layer{self.index}/b{j}"


@dataclass(eq=False)
class CopulaFlowStack:
    """The full copula flow: an ordered list of masked spline layers.

    Forward = sampling direction (iid uniforms -> correlated uniforms);
    inverse = density direction.  Immutable by convention after fitting;
    `saturation_count` tallies clamped out-of-range density inputs.
    """

    layers: tuple
    d: int
    k_bins: int
    hidden_sizes: tuple
    params: ParamVector
    seed: int = 0
    saturation_count: int = 0
    _compiled: dict = field(default_factory=dict, repr=False)

    def with_params(self, params: ParamVector) -> "CopulaFlowStack":
        return CopulaFlowStack(layers=self.layers, d=self.d,
                               k_bins=self.k_bins,
                               hidden_sizes=self.hidden_sizes, params=params,
                               seed=self.seed)

    def _jitted(self, key, builder):
        fn = self._compiled.get(key)
        if fn is None:
            fn = jax.jit(builder())
            self._compiled[key] = fn
        return fn


def _degree_masks(d, hidden_sizes, params_per_dim, order_index):
    """MADE masks for one conditioner: strict autoregressive dependency."""
    degrees = [np.asarray(order_index, dtype=np.int64)]
    for width in hidden_sizes:
        degrees.append(np.arange(width, dtype=np.int64) % max(d - 1, 1))
    masks = []
    for j in range(len(hidden_sizes)):
        masks.append((degrees[j + 1][:, None] >= degrees[j][None, :])
                     .astype(np.float64))
    out_degrees = np.repeat(degrees[0], params_per_dim)
    masks.append((out_degrees[:, None] > degrees[-1][None, :])
                 .astype(np.float64))
    return tuple(degrees), tuple(masks)


def build_conditioner(d, hidden_sizes, k_bins, order_index) -> MaskedConditioner:
    params_per_dim = 3 * k_bins + 1
    degrees, masks = _degree_masks(d, hidden_sizes, params_per_dim, order_index)
    widths = (d, *hidden_sizes, d * params_per_dim)
    return MaskedConditioner(layer_widths=widths, masks=masks,
                             degrees=degrees,
                             ordering=np.asarray(order_index, dtype=np.int64))


def build_copula_flow(d, hidden_sizes, k_bins, n_layers, seed=0) -> CopulaFlowStack:
    """Construct an identity-initialized stack.

    Hidden weights are randomly initialized (seeded); every final dense
    layer is zeroed so all per-dimension splines start as the identity and
    the stack is the independence structure.
    """
    if d < 2:
        raise ConfigurationError("copula flow needs dimension >= 2")
    if k_bins < 2 or n_layers < 1 or any(h < 1 for h in hidden_sizes):
        raise ConfigurationError("invalid copula flow sizes")
    rng = np.random.default_rng(seed)
    layers = []
    blocks = {}
    for i in range(n_layers):
        order = np.arange(d) if i % 2 == 0 else np.arange(d)[::-1].copy()
        cond = build_conditioner(d, tuple(hidden_sizes), k_bins, order)
        layer = CopulaFlowLayer(conditioner=cond, k_bins=k_bins, index=i)
        widths = cond.layer_widths
        n_dense = len(cond.masks)
        for j, (w_name, b_name) in enumerate(layer.block_names()):
            n_in, n_out = widths[j], widths[j + 1]
            if j == n_dense - 1:
                w = np.zeros((n_out, n_in))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
                w *= cond.masks[j]
            blocks[w_name] = w
            blocks[b_name] = np.zeros(n_out)
        layers.append(layer)
    params = ParamVector.from_blocks(blocks)
    return CopulaFlowStack(layers=tuple(layers), d=d, k_bins=k_bins,
                           hidden_sizes=tuple(hidden_sizes), params=params,
                           seed=seed)


def _conditioner_spline_knots(values, layer, layout, x):
    """One masked pass: coordinates (N, d) -> per-dimension spline knots.

    The network input is clamped to [eps, 1-eps] and centered; the output
    reshapes to (N, d, 3K+1) and splits into raw widths/heights/slopes.
    """
    cond = layer.conditioner
    h = 2.0 * jnp.clip(x, INPUT_CLAMP_EPS, 1.0 - INPUT_CLAMP_EPS) - 1.0
    n_dense = len(cond.masks)
    widths = cond.layer_widths
    for j, (w_name, b_name) in enumerate(layer.block_names()):
        w = values[layout[w_name]].reshape(widths[j + 1], widths[j])
        b = values[layout[b_name]]
        h = h @ (w * cond.masks[j]).T + b
        if j < n_dense - 1:
            h = jnp.tanh(h)
    out = h.reshape(x.shape[0], cond.d, layer.params_per_dim)
    k = layer.k_bins
    return normalize_knots(out[..., :k], out[..., k:2 * k], out[..., 2 * k:])


def _layer_inverse(values, layer, layout, x):
    """Conditional-CDF pass of one layer: (N, d) -> (u, per-row logdet)."""
    ku, ky, kd = _conditioner_spline_knots(values, layer, layout, x)
    u, logd = unit_inverse(ku, ky, kd, x)
    return u, jnp.sum(logd, axis=-1)


def _stack_inverse(values, layers, layout, ux):
    logdet = jnp.zeros(ux.shape[0])
    u = ux
    for layer in reversed(layers):
        u, ld = _layer_inverse(values, layer, layout, u)
        logdet = logdet + ld
    return u, logdet


def _layer_forward(values, layer, layout, u):
    """Sampling pass of one layer: d sequential partial conditioner passes."""
    position_to_dim = np.argsort(layer.conditioner.ordering)
    x = jnp.zeros_like(u)
    for pos in range(layer.conditioner.d):
        dim = int(position_to_dim[pos])
        ku, ky, kd = _conditioner_spline_knots(values, layer, layout, x)
        x_dim, _ = unit_forward(ku[:, dim], ky[:, dim], kd[:, dim], u[:, dim])
        x = x.at[:, dim].set(x_dim)
    return x


def _stack_forward(values, layers, layout, u):
    x = u
    for layer in layers:
        x = _layer_forward(values, layer, layout, x)
    return x


def _as_batch(u):
    arr = np.asarray(u, dtype=np.float64)
    single = arr.ndim == 1
    return (arr[None, :] if single else arr), single


def copula_inverse(stack: CopulaFlowStack, u_x):
    """Map correlated uniforms to iid uniforms; returns (u, logdet).

    Accepts one row (d,) or a batch (N, d).  Inputs outside [0,1] are
    clamped and counted in the stack's saturation diagnostics.
    """
    batch, single = _as_batch(u_x)
    if batch.shape[1] != stack.d:
        raise ConfigurationError(
            f"input has {batch.shape[1]} columns, stack dimension is {stack.d}")
    out_of_range = int(np.sum((batch < 0.0) | (batch > 1.0)))
    if out_of_range:
        stack.saturation_count += out_of_range
        batch = np.clip(batch, 0.0, 1.0)
    fn = stack._jitted("inverse", lambda: (
        lambda values, ux: _stack_inverse(values, stack.layers,
                                          stack.params.layout, ux)))
    u, logdet = fn(jnp.asarray(stack.params.values), jnp.asarray(batch))
    u = np.asarray(u)
    logdet = np.asarray(logdet)
    if single:
        return u[0], float(logdet[0])
    return u, logdet


def copula_logdensity(stack: CopulaFlowStack, u_x):
    """Log-density of the learned dependence structure at u_x; the base
    density is uniform, so this equals the inverse-pass logdet."""
    return copula_inverse(stack, u_x)[1]


def copula_sample(stack: CopulaFlowStack, u):
    """Push iid uniforms through the flow to correlated uniforms."""
    batch, single = _as_batch(u)
    if batch.shape[1] != stack.d:
        raise ConfigurationError(
            f"input has {batch.shape[1]} columns, stack dimension is {stack.d}")
    fn = stack._jitted("forward", lambda: (
        lambda values, z: _stack_forward(values, stack.layers,
                                         stack.params.layout, z)))
    x = np.asarray(fn(jnp.asarray(stack.params.values), jnp.asarray(batch)))
    return x[0] if single else x


@dataclass(frozen=True)
class CopulaFitConfig:
    """Hyperparameters for fitting the copula flow."""

    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 1e-4
    val_fraction: float = 0.1
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in (0, 1)")


def fit_copula(stack: CopulaFlowStack, u_data,
               config: CopulaFitConfig | None = None):
    """Maximize the mean flow log-density over rows of uniform marginals.

    Returns (trained stack, trace).  Rows must lie in [0,1]^d; fewer than
    100 rows earns a warning, NaNs are an error.
    """
    config = config or CopulaFitConfig()
    u_data = np.asarray(u_data, dtype=np.float64)
    if u_data.ndim != 2 or u_data.shape[1] != stack.d:
        raise DataError(
            f"uniform-marginal matrix must be (N, {stack.d})")
    if np.any(np.isnan(u_data)):
        raise DataError("uniform-marginal matrix contains NaN")
    if np.any((u_data < 0.0) | (u_data > 1.0)):
        raise DataError("uniform-marginal matrix has entries outside [0, 1]")
    if u_data.shape[0] < 100:
        warnings.warn(f"only {u_data.shape[0]} rows for the copula fit",
                      stacklevel=2)

    layers = stack.layers
    layout = stack.params.layout

    def nll(values, batch):
        _, logdet = _stack_inverse(values, layers, layout, batch)
        return -jnp.mean(logdet)

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(u_data.shape[0])
    n_val = max(1, int(round(u_data.shape[0] * config.val_fraction)))
    val = u_data[perm[:n_val]]
    train = u_data[perm[n_val:]]
    settings = FitSettings(epochs=config.epochs, batch_size=config.batch_size,
                           learning_rate=config.learning_rate,
                           patience=config.patience,
                           shuffle_seed=config.seed)
    best, trace = fit_maximum_likelihood(nll, stack.params, train, val, settings)
    return stack.with_params(best), trace
