"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Everything the training pipeline differentiates goes through this module:
elementwise ops, matmul, concat, Gaussian log-density, L1 loss, stop-gradient,
MLPs, and Adam. Broadcasting is limited to a leading batch dimension
(matrix + row-vector bias).
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives incompatible tensor shapes."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of differentiable ops; creation order is topological."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def clear(self):
        self.nodes.clear()


class no_grad:
    """Context that suppresses tape recording (forward-only evaluation)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list = []


def _active_tape():
    if not _TAPE_STACK:
        return None
    return _TAPE_STACK[-1]


def _record(out, parents, backward):
    tape = _active_tape()
    if tape is None:
        return out
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    # collapse broadcast over the leading batch axis (bias case)
    if g.shape != t.data.shape:
        if g.ndim == t.data.ndim + 1 and g.shape[1:] == t.data.shape:
            g = g.sum(axis=0)
        else:
            raise ShapeError(f"gradient shape {g.shape} vs tensor {t.data.shape}")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# forward ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), backward)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s)

    def backward(g):
        _accum(a, g * s)

    return _record(out, (a,), backward)


def neg(a):
    return scale(a, -1.0)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        splits = np.cumsum(sizes[:-1])
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _record(out, tuple(tensors), backward)


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _record(out, (a,), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))

    def backward(g):
        _accum(a, g * mask)

    return _record(out, (a,), backward)


def exp(a):
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)

    def backward(g):
        _accum(a, g * y)

    return _record(out, (a,), backward)


def square(a):
    a = _as_tensor(a)
    out = Tensor(a.data * a.data)

    def backward(g):
        _accum(a, g * 2.0 * a.data)

    return _record(out, (a,), backward)


def minimum(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data  # subgradient: first argument on ties
    out = Tensor(np.where(take_a, a.data, b.data))

    def backward(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _record(out, (a, b), backward)


def clip(a, lo, hi):
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi))

    def backward(g):
        _accum(a, g * inside)

    return _record(out, (a,), backward)


def mean(a):
    a = _as_tensor(a)
    out = Tensor(a.data.mean())
    n = a.data.size

    def backward(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _record(out, (a,), backward)


def tsum(a):
    a = _as_tensor(a)
    out = Tensor(a.data.sum())

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _record(out, (a,), backward)


def gaussian_log_prob(x, mean_t, log_std):
    """Per-row log-density of x under a diagonal Gaussian.

    x is a constant (B, K) array; mean_t is (B, K); log_std is (K,).
    Returns a (B,) tensor.
    """
    mean_t, log_std = _as_tensor(mean_t), _as_tensor(log_std)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != mean_t.data.shape:
        raise ShapeError(f"gaussian_log_prob: x {x.shape} vs mean {mean_t.data.shape}")
    std = np.exp(log_std.data)
    z = (x - mean_t.data) / std
    lp = -0.5 * (z * z).sum(axis=-1) - log_std.data.sum() - 0.5 * x.shape[-1] * math.log(2.0 * math.pi)
    out = Tensor(lp)

    def backward(g):
        g = g[..., None]
        _accum(mean_t, g * z / std)
        _accum(log_std, (g * (z * z - 1.0)).reshape(-1, x.shape[-1]).sum(axis=0))

    return _record(out, (mean_t, log_std), backward)


def l1_loss(predicted, target):
    """Mean absolute error; target is a constant. Subgradient at 0 is 0."""
    predicted = _as_tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    if predicted.data.shape != target.shape:
        raise ShapeError(f"l1_loss: {predicted.data.shape} vs {target.shape}")
    diff = predicted.data - target
    out = Tensor(np.abs(diff).mean())
    n = diff.size

    def backward(g):
        _accum(predicted, float(g) * np.sign(diff) / n)

    return _record(out, (predicted,), backward)


def stop_gradient(a):
    """Forward identity; no gradient flows to ancestors of a."""
    a = _as_tensor(a)
    return Tensor(a.data.copy())


def backward(tape, loss):
    """Populate .grad of every requires_grad ancestor of a scalar loss."""
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.asarray(1.0)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# networks and optimizer


def he_uniform(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected net: affine + tanh hidden layers, affine output."""

    def __init__(self, layer_dims, rng=None, name="mlp"):
        self.layer_dims = list(layer_dims)
        self.name = name
        self.weights = []
        self.biases = []
        for i in range(len(layer_dims) - 1):
            fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
            w = he_uniform(rng, fan_in, fan_out) if rng is not None else np.zeros((fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        x = _as_tensor(x)
        if x.data.ndim == 1:
            x = Tensor(x.data[None, :], requires_grad=x.requires_grad)
        if x.data.shape[-1] != self.layer_dims[0]:
            raise ShapeError(
                f"{self.name}: input width {x.data.shape[-1]}, expected {self.layer_dims[0]}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                h = tanh(h)
        return h

    def parameters(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{self.name}.W{i}", w))
            out.append((f"{self.name}.b{i}", b))
        return out

    def num_parameters(self):
        return sum(w.data.size + b.data.size for w, b in zip(self.weights, self.biases))


class Adam:
    """Adam with bias correction over a list of (name, Tensor) parameters."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"NaN/Inf gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.epsilon)

    def state_arrays(self):
        """Flat dict of optimizer state for checkpointing."""
        out = {"adam.t": np.asarray([float(self.t)])}
        for name, _ in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["adam.t"][0])
        for name, _ in self.params:
            self.m[name] = arrays[f"adam.m.{name}"].copy()
            self.v[name] = arrays[f"adam.v.{name}"].copy()


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm
