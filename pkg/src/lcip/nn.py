"""Minimal dense-network machinery: forward, exact backprop, Adam, losses.

Everything operates on plain numpy arrays. Training arithmetic is float32;
the same code paths run unchanged on float64 copies (``MlpModel.astype``),
which is how the finite-difference gradient checks get a 64-bit shadow path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "sigmoid", "identity")


def as_matrix(data, name: str = "input", cols: int | None = None) -> np.ndarray:
    """Validate external input as a finite 2D float32 array (C-order).

    Raises ValueError on non-finite entries (reporting the first offending
    row/column) and on dimension mismatch.
    """
    x = np.ascontiguousarray(data, dtype=np.float32)
    if x.ndim != 2:
        raise ValueError(f"{name}: expected a 2D array, got shape {x.shape}")
    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"{name}: non-finite value at row {bad[0]}, col {bad[1]}")
    if cols is not None and x.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} columns, got {x.shape[1]}")
    return x


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"
    batch_norm: BatchNormState | None = None


@dataclass
class MlpModel:
    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: per layer w, b, (gamma, beta)."""
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
            if layer.batch_norm is not None:
                params.append(layer.batch_norm.gamma)
                params.append(layer.batch_norm.beta)
        return params

    def set_parameters(self, values: list[np.ndarray]) -> None:
        own = self.parameters()
        if len(own) != len(values):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, values):
            dst[...] = src

    def astype(self, dtype) -> "MlpModel":
        """Deep copy with all tensors cast to dtype (e.g. float64 shadow)."""
        layers = []
        for layer in self.layers:
            bn = None
            if layer.batch_norm is not None:
                b = layer.batch_norm
                bn = BatchNormState(
                    b.gamma.astype(dtype), b.beta.astype(dtype),
                    b.running_mean.astype(dtype), b.running_var.astype(dtype),
                    b.momentum, b.epsilon,
                )
            layers.append(DenseLayer(layer.weight.astype(dtype),
                                     layer.bias.astype(dtype),
                                     layer.activation, bn))
        return MlpModel(layers)

    def copy(self) -> "MlpModel":
        return self.astype(self.layers[0].weight.dtype)


def init_mlp(sizes: list[int], hidden_activation: str = "relu",
             output_activation: str = "identity", batch_norm: bool = False,
             rng: np.random.Generator | None = None,
             dtype=np.float32) -> MlpModel:
    """Build an MLP with He-uniform init for relu layers, Xavier otherwise.

    ``batch_norm`` inserts a batch-norm stage after each hidden linear layer
    (not after the output layer).
    """
    rng = rng or np.random.default_rng()
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == len(sizes) - 2
        act = output_activation if last else hidden_activation
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        bn = None
        if batch_norm and not last:
            bn = BatchNormState(
                gamma=np.ones(fan_out, dtype=dtype),
                beta=np.zeros(fan_out, dtype=dtype),
                running_mean=np.zeros(fan_out, dtype=dtype),
                running_var=np.ones(fan_out, dtype=dtype),
            )
        layers.append(DenseLayer(w, b, act, bn))
    return MlpModel(layers)


@dataclass
class ForwardTape:
    """Per-layer intermediates recorded by forward, consumed by backward."""
    model: MlpModel
    train: bool
    inputs: list[np.ndarray] = field(default_factory=list)  # layer inputs
    bn_cache: list[tuple | None] = field(default_factory=list)
    pre_act: list[np.ndarray] = field(default_factory=list)  # post-bn, pre-activation
    outputs: list[np.ndarray] = field(default_factory=list)


def _activate(name: str, s: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(s, 0)
    if name == "sigmoid":
        return expit(s)
    if name == "identity":
        return s
    raise ValueError(f"unknown activation {name!r}")


def forward(model: MlpModel, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, ForwardTape]:
    """Run the network; returns (output, tape).

    train=True uses batch statistics for batch-norm stages and updates the
    running statistics in place; train=False uses the stored running stats
    (a pure affine map, independent of batch composition).
    """
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ValueError(f"forward: input shape {x.shape} incompatible with "
                         f"model input dim {model.in_dim}")
    tape = ForwardTape(model, train)
    h = x
    for layer in model.layers:
        tape.inputs.append(h)
        s = h @ layer.weight
        s += layer.bias
        bn = layer.batch_norm
        if bn is not None:
            if train:
                mean = s.mean(axis=0)
                var = s.var(axis=0)  # population variance
                inv_std = 1.0 / np.sqrt(var + bn.epsilon)
                centered = s - mean
                xhat = centered * inv_std
                bn.running_mean[...] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
                bn.running_var[...] = (1 - bn.momentum) * bn.running_var + bn.momentum * var
                tape.bn_cache.append((centered, inv_std, xhat))
            else:
                inv_std = 1.0 / np.sqrt(bn.running_var + bn.epsilon)
                xhat = (s - bn.running_mean) * inv_std
                tape.bn_cache.append((None, inv_std, xhat))
            s = bn.gamma * xhat + bn.beta
        else:
            tape.bn_cache.append(None)
        tape.pre_act.append(s)
        h = _activate(layer.activation, s)
        tape.outputs.append(h)
    return h, tape


def backward(tape: ForwardTape, grad_output: np.ndarray,
             param_grads: bool = True) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact gradients for every parameter plus the gradient w.r.t. the input.

    Returns (grads, grad_input) with grads ordered like model.parameters().
    With param_grads=False only grad_input is computed (grads is empty);
    used when backpropagating through a frozen network.
    """
    model = tape.model
    if grad_output.shape != tape.outputs[-1].shape:
        raise ValueError(f"backward: grad_output shape {grad_output.shape} != "
                         f"output shape {tape.outputs[-1].shape}")
    grads: list[list[np.ndarray]] = []
    g = grad_output
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        out = tape.outputs[idx]
        pre = tape.pre_act[idx]
        if layer.activation == "relu":
            g = g * (pre > 0)
        elif layer.activation == "sigmoid":
            dact = 1.0 - out
            dact *= out
            g = g * dact
        # identity: g unchanged
        bn = layer.batch_norm
        layer_grads: list[np.ndarray] = []
        if bn is not None:
            centered, inv_std, xhat = tape.bn_cache[idx]
            if param_grads:
                dgamma = (g * xhat).sum(axis=0)
                dbeta = g.sum(axis=0)
            dxhat = g * bn.gamma
            if tape.train:
                m = g.shape[0]
                dvar = (dxhat * centered).sum(axis=0) * (-0.5) * inv_std**3
                dmean = -(dxhat.sum(axis=0)) * inv_std + dvar * (-2.0 / m) * centered.sum(axis=0)
                g = dxhat * inv_std + dvar * (2.0 / m) * centered + dmean / m
            else:
                g = dxhat * inv_std  # eval mode: frozen affine map
        h = tape.inputs[idx]
        if param_grads:
            dw = h.T @ g
            db = g.sum(axis=0)
            layer_grads = [dw, db]
            if bn is not None:
                layer_grads += [dgamma, dbeta]
            grads.append(layer_grads)
        g = g @ layer.weight.T
    flat: list[np.ndarray] = []
    for layer_grads in reversed(grads):
        flat.extend(layer_grads)
    return flat, g


def mse_loss(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all entries of (a-b)^2 and its gradient w.r.t. a."""
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    loss = float(np.mean(diff * diff))
    grad = diff * (2.0 / diff.size)
    return loss, grad


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows for integer labels; returns (loss, dlogits)."""
    if logits.shape[0] != labels.shape[0]:
        raise ValueError("softmax_cross_entropy: row count mismatch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    m = logits.shape[0]
    picked = probs[np.arange(m), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-30))))
    grad = probs.copy()
    grad[np.arange(m), labels] -= 1
    grad /= m
    return loss, grad


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 0.001
    scratch: list[np.ndarray] = field(default_factory=list)  # update workspace


def adam_init(params: list[np.ndarray], learning_rate: float = 0.001) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     learning_rate=learning_rate,
                     scratch=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Standard bias-corrected Adam update, applied in place.

    Algebraically identical to m_hat = m/(1-b1^t), v_hat = v/(1-b2^t),
    p -= lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded
    into scalars so the hot loop runs fused in-place ops.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params/grads/state length mismatch")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    sqrt_bc2 = np.sqrt(1.0 - state.beta2**t)
    step_scale = state.learning_rate * sqrt_bc2 / bc1
    eps_scaled = state.epsilon * sqrt_bc2
    if len(state.scratch) != len(state.m):  # states loaded from older pickles
        state.scratch = [np.zeros_like(p) for p in state.m]
    for p, g, m, v, w in zip(params, grads, state.m, state.v, state.scratch):
        if p.shape != g.shape:
            raise ValueError("adam_step: param/grad shape mismatch")
        np.multiply(m, state.beta1, out=m)
        np.multiply(g, 1.0 - state.beta1, out=w)
        m += w
        np.multiply(v, state.beta2, out=v)
        np.multiply(g, g, out=w)
        w *= 1.0 - state.beta2
        v += w
        np.sqrt(v, out=w)
        w += eps_scaled
        np.divide(m, w, out=w)
        w *= step_scale
        p -= w
