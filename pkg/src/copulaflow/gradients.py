"""Flat parameter vectors, loss gradients, and the Adam-style optimizer.

Training losses in this package are scalar functions of one flat float64
vector; `ParamVector` keeps a named-block layout over that vector so model
code can address its pieces.  Gradients come from reverse-mode
differentiation of the loss graph (exact up to float rounding).  The
module also houses the shared minibatch maximum-likelihood loop with
validation-based early stopping used by every fit function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import jax
import jax.numpy as jnp

from .errors import ConfigurationError, ParameterError, TrainingError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 5.0


@dataclass(frozen=True)
class ParamVector:
    """A flat float64 vector with an ordered registry of named blocks."""

    values: np.ndarray
    layout: dict

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if not np.all(np.isfinite(vals)):
            raise ParameterError("parameter vector contains non-finite entries")
        covered = 0
        prev_stop = 0
        for name, sl in self.layout.items():
            if sl.start != prev_stop:
                raise ConfigurationError(
                    f"layout block {name!r} does not abut the previous block")
            prev_stop = sl.stop
            covered += sl.stop - sl.start
        if covered != vals.size:
            raise ConfigurationError(
                f"layout covers {covered} entries, vector has {vals.size}")

    @classmethod
    def from_blocks(cls, blocks: dict) -> "ParamVector":
        """Concatenate named arrays (flattened, in dict order) into one
        vector.  Callers keep their own record of block shapes."""
        layout = {}
        parts = []
        start = 0
        for name, arr in blocks.items():
            flat = np.asarray(arr, dtype=np.float64).ravel()
            layout[name] = slice(start, start + flat.size)
            start += flat.size
            parts.append(flat)
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values=values, layout=layout)

    def block(self, name: str) -> np.ndarray:
        return self.values[self.layout[name]]

    def replace_values(self, values) -> "ParamVector":
        return ParamVector(values=np.asarray(values, dtype=np.float64),
                           layout=self.layout)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass
class OptimizerState:
    """Adaptive-moment accumulator state."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


def value_and_grad(loss, params: ParamVector, batch, batch_index=None):
    """Evaluate `loss(values, batch)` and its gradient w.r.t. the flat vector.

    `loss` must be a jnp-traceable scalar function.  Raises TrainingError on a
    non-finite loss, carrying the offending batch index when supplied.
    Deterministic for fixed inputs.
    """
    val, grad = jax.value_and_grad(loss)(jnp.asarray(params.values), batch)
    val = float(val)
    if not np.isfinite(val):
        raise TrainingError(f"non-finite loss {val}", batch_index=batch_index)
    return val, np.asarray(grad)


def clip_global_norm(grad: np.ndarray, max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def optimizer_step(params: ParamVector, grad: np.ndarray, state: OptimizerState,
                   learning_rate: float,
                   beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                   eps: float = ADAM_EPS,
                   clip_norm: float = GRAD_CLIP_NORM):
    """One adaptive-moment update with bias correction.

    The gradient is first clipped to `clip_norm` in global norm.  Returns the
    updated (params, state); the inputs are not mutated.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ConfigurationError(
            f"gradient shape {grad.shape} != params shape {params.values.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient, step aborted")
    grad = clip_global_norm(grad, clip_norm)
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1.0 - beta1) * grad
    v = beta2 * state.second_moment + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_values = params.values - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params.replace_values(new_values), OptimizerState(m, v, t)


@dataclass(frozen=True)
class FitSettings:
    """Knobs for the shared minibatch maximum-likelihood loop.

    Early stopping watches validation NLL (`patience`).  The learning rate
    decays by `lr_decay` whenever the epoch-mean training NLL stalls for
    `decay_patience` epochs, which unsticks the optimizer from overshoot
    plateaus without reacting to validation noise.  `lr_decay=1.0` disables
    decay.
    """

    epochs: int
    batch_size: int
    learning_rate: float
    patience: int = 10
    shuffle_seed: int = 0
    lr_decay: float = 0.5
    decay_patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError("lr_decay must be in (0, 1]")

    @property
    def effective_decay_patience(self) -> int:
        if self.decay_patience is not None:
            return self.decay_patience
        return max(2, self.patience // 3)


@dataclass
class TrainingTrace:
    """Per-epoch (train NLL, validation NLL) records.  Epoch 0 is the
    untrained starting point."""

    epochs: list = field(default_factory=list)
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)

    def append(self, epoch, train, val):
        self.epochs.append(int(epoch))
        self.train_nll.append(float(train))
        self.val_nll.append(float(val))

    def rows(self):
        return list(zip(self.epochs, self.train_nll, self.val_nll))

    def write_csv(self, handle, stage=""):
        prefix = f"{stage}," if stage else ""
        for epoch, tr, va in self.rows():
            handle.write(f"{prefix}{epoch},{tr!r},{va!r}\n")

    @property
    def best_val(self):
        return min(self.val_nll)


def fit_maximum_likelihood(nll, params0: ParamVector, train_data, val_data,
                           settings: FitSettings):
    """Minimize mean per-row NLL by minibatch Adam with early stopping.

    `nll(values, batch)` must be a jnp scalar function of the flat parameter
    vector and a block of rows (first axis of `train_data`).  Validation NLL
    is tracked each epoch; the best checkpoint (including the untrained
    start) is returned after `patience` epochs without improvement.
    Deterministic for fixed seeds and data.
    """
    train_data = np.asarray(train_data)
    val_data = np.asarray(val_data)
    if not (np.all(np.isfinite(train_data)) and np.all(np.isfinite(val_data))):
        raise TrainingError("training data contains non-finite values")

    loss_grad = jax.jit(jax.value_and_grad(nll))
    loss_only = jax.jit(nll)

    rng = np.random.default_rng(settings.shuffle_seed)
    n = train_data.shape[0]
    params = params0
    state = OptimizerState.zeros(params.size)
    trace = TrainingTrace()

    def val_loss(p):
        return float(loss_only(jnp.asarray(p.values), jnp.asarray(val_data)))

    best_val = val_loss(params)
    best_params = params
    trace.append(0, float(loss_only(jnp.asarray(params.values),
                                    jnp.asarray(train_data))), best_val)
    stale = 0
    train_stale = 0
    best_train = np.inf
    lr = settings.learning_rate
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(n)
        epoch_losses = []
        for bidx, start in enumerate(range(0, n, settings.batch_size)):
            batch = train_data[perm[start:start + settings.batch_size]]
            val, grad = loss_grad(jnp.asarray(params.values), jnp.asarray(batch))
            val = float(val)
            if not np.isfinite(val):
                raise TrainingError(f"non-finite loss {val}", batch_index=bidx)
            params, state = optimizer_step(params, np.asarray(grad), state, lr)
            epoch_losses.append(val)
        train_nll = float(np.mean(epoch_losses))
        vl = val_loss(params)
        trace.append(epoch, train_nll, vl)
        if vl < best_val:
            best_val = vl
            best_params = params
            stale = 0
        else:
            stale += 1
            if stale >= settings.patience:
                break
        if train_nll < best_train - 1e-12:
            best_train = train_nll
            train_stale = 0
        else:
            train_stale += 1
            if (settings.lr_decay < 1.0
                    and train_stale >= settings.effective_decay_patience):
                lr *= settings.lr_decay
                train_stale = 0
    return best_params, trace
