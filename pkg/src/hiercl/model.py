"""Dense feed-forward model over a flat parameter vector.

All model state lives in a single 1-D float64 array so that second-order
consolidation can treat the network as a point in R^p. Forward, loss,
analytic gradients and per-sample gradients are implemented with plain
numpy; finite-difference helpers serve as independent oracles for tests
and for the dense curvature path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ParamVector = np.ndarray  # flat float64 vector of length p

ACTIVATIONS = ("tanh", "relu")
TASK_KINDS = ("classification", "regression")

# finite-difference Hessians are dense p x p; keep oracle use small
MAX_ORACLE_DIM = 200


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the dense net: layer widths, activation, task kind."""

    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    task_kind: str = "classification"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("model needs at least an input and an output layer")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_widths, self.layer_widths[1:]))


@dataclass
class Batch:
    """A batch of inputs plus integer class labels or real-valued targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D (n, input_dim) array")
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        self.targets = np.asarray(self.targets)
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets disagree on sample count")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def _check_batch(batch: Batch, spec: ModelSpec):
    if batch.inputs.shape[1] != spec.input_dim:
        raise ValueError(
            f"batch input dim {batch.inputs.shape[1]} != model input dim {spec.input_dim}"
        )
    if spec.task_kind == "classification":
        if batch.targets.ndim != 1:
            raise ValueError("classification targets must be a 1-D label array")
        labels = batch.targets
        if labels.size and (labels.min() < 0 or labels.max() >= spec.output_dim):
            raise ValueError("class labels out of range for the output layer")
    else:
        t = batch.targets
        if t.ndim == 1:
            t = t[:, None]
        if t.shape[1] != spec.output_dim:
            raise ValueError("regression targets do not match the output width")


def _regression_targets(batch: Batch) -> np.ndarray:
    t = np.asarray(batch.targets, dtype=np.float64)
    return t[:, None] if t.ndim == 1 else t


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Deterministic init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(spec.layer_widths, spec.layer_widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _split_params(params: ParamVector, spec: ModelSpec):
    """View the flat vector as per-layer (W, b) pairs without copying."""
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != spec.param_count:
        raise ValueError(
            f"parameter vector has length {params.size}, expected {spec.param_count}"
        )
    layers = []
    off = 0
    for fan_in, fan_out in zip(spec.layer_widths, spec.layer_widths[1:]):
        w = params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off : off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def _forward(params: ParamVector, inputs: np.ndarray, spec: ModelSpec):
    """Forward pass keeping hidden activations for backprop.

    Hidden layers use the configured nonlinearity; the output layer is
    linear (logits for classification, raw values for regression).
    """
    layers = _split_params(params, spec)
    acts = [np.asarray(inputs, dtype=np.float64)]
    pre = []
    a = acts[0]
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre.append(z)
        if i < len(layers) - 1:
            a = np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)
        else:
            a = z
        acts.append(a)
    return acts, pre


def predict(params: ParamVector, inputs: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Network outputs: logits (classification) or values (regression)."""
    acts, _ = _forward(params, inputs, spec)
    return acts[-1]


def _output_loss_and_delta(out: np.ndarray, batch: Batch, spec: ModelSpec):
    """Mean loss over the batch and its gradient w.r.t. the outputs."""
    n = out.shape[0]
    if spec.task_kind == "classification":
        y = np.asarray(batch.targets, dtype=np.intp)
        m = out.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(out - m).sum(axis=1, keepdims=True))
        logp = out - lse
        loss = -logp[np.arange(n), y].mean()
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        return loss, delta / n
    t = _regression_targets(batch)
    r = out - t
    loss = float(np.mean(r * r))
    return loss, 2.0 * r / r.size


def _backward(acts, pre, delta, spec: ModelSpec, params: ParamVector) -> ParamVector:
    """Backpropagate an output-side delta into a flat parameter gradient."""
    layers = _split_params(params, spec)
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads[i] = (gw, gb)
        if i > 0:
            delta = delta @ w.T
            z = pre[i - 1]
            if spec.activation == "tanh":
                delta = delta * (1.0 - np.tanh(z) ** 2)
            else:
                delta = delta * (z > 0.0)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def loss_and_grad(params: ParamVector, batch: Batch, spec: ModelSpec):
    """Mean loss over the batch and its analytic gradient (length p).

    Classification: softmax cross-entropy. Regression: mean squared error
    over all output entries.
    """
    _check_batch(batch, spec)
    acts, pre = _forward(params, batch.inputs, spec)
    loss, delta = _output_loss_and_delta(acts[-1], batch, spec)
    return loss, _backward(acts, pre, delta, spec, params)


def per_sample_grads(params: ParamVector, batch: Batch, spec: ModelSpec) -> np.ndarray:
    """Gradient of each sample's own loss, stacked into an (n, p) matrix.

    Row i equals loss_and_grad on the single-sample batch i. Vectorized:
    the per-layer weight gradient for sample i is outer(activation_i,
    delta_i), assembled with einsum instead of a Python loop.
    """
    _check_batch(batch, spec)
    acts, pre = _forward(params, batch.inputs, spec)
    out = acts[-1]
    n = out.shape[0]
    if spec.task_kind == "classification":
        y = np.asarray(batch.targets, dtype=np.intp)
        m = out.max(axis=1, keepdims=True)
        p = np.exp(out - m)
        p /= p.sum(axis=1, keepdims=True)
        delta = p.copy()
        delta[np.arange(n), y] -= 1.0
    else:
        t = _regression_targets(batch)
        delta = 2.0 * (out - t) / t.shape[1]

    layers = _split_params(params, spec)
    pieces = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = np.einsum("ni,nj->nij", acts[i], delta).reshape(n, -1)
        pieces[i] = np.concatenate([gw, delta], axis=1)
        if i > 0:
            delta = delta @ w.T
            z = pre[i - 1]
            if spec.activation == "tanh":
                delta = delta * (1.0 - np.tanh(z) ** 2)
            else:
                delta = delta * (z > 0.0)
    return np.concatenate(pieces, axis=1)


def accuracy_eval(params: ParamVector, batch: Batch, spec: ModelSpec) -> float:
    """Fraction of argmax-correct labels, or 1/(1+MSE) for regression.

    Both scores live in [0, 1] so permutation selection can argmax either
    task kind uniformly.
    """
    _check_batch(batch, spec)
    if batch.n < 1:
        raise ValueError("cannot evaluate an empty batch")
    out = predict(params, batch.inputs, spec)
    if spec.task_kind == "classification":
        y = np.asarray(batch.targets, dtype=np.intp)
        return float(np.mean(out.argmax(axis=1) == y))
    t = _regression_targets(batch)
    mse = float(np.mean((out - t) ** 2))
    return 1.0 / (1.0 + mse)


def _coord_steps(w: np.ndarray, h: float) -> np.ndarray:
    # relative step balances truncation against rounding error
    return h * (1.0 + np.abs(w))


def fd_gradient(fn, w: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function. Test oracle."""
    w = np.asarray(w, dtype=np.float64)
    steps = _coord_steps(w, h)
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = steps[i]
        g[i] = (fn(w + e) - fn(w - e)) / (2.0 * steps[i])
    return g


def fd_hessian_from_grad(grad_fn, w: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Symmetrized central differences of a gradient function."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    w = np.asarray(w, dtype=np.float64)
    if w.size > MAX_ORACLE_DIM:
        raise ValueError(
            f"dense finite-difference Hessian limited to p <= {MAX_ORACLE_DIM}, got {w.size}"
        )
    steps = _coord_steps(w, h)
    cols = np.empty((w.size, w.size))
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = steps[i]
        cols[:, i] = (grad_fn(w + e) - grad_fn(w - e)) / (2.0 * steps[i])
    return 0.5 * (cols + cols.T)


def finite_diff_hessian(
    params: ParamVector, batch: Batch, spec: ModelSpec, h: float = 1e-4
) -> np.ndarray:
    """Dense Hessian of the batch loss via central differences of the
    analytic gradient. Oracle for tiny models only (p <= 200)."""
    grad_fn = lambda w: loss_and_grad(w, batch, spec)[1]
    return fd_hessian_from_grad(grad_fn, np.asarray(params, dtype=np.float64), h)
