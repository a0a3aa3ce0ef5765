"""Layers with explicit forward/backward passes.

Activations are (B, C, T) arrays. Each layer caches what its backward pass
needs during ``forward`` and accumulates parameter gradients into
``Parameter.grad`` during ``backward``, returning the input gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BadTarget, ShapeMismatch
from . import kernels


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    decay: bool = True
    grad: np.ndarray = field(default=None, repr=False)
    momentum_buf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buf is None:
            self.momentum_buf = np.zeros_like(self.value)

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.momentum_buf = self.momentum_buf.astype(dtype)


class Module:
    """Minimal container: parameters, buffers, children, train/eval flag."""

    def __init__(self, name: str = ""):
        self.name = name
        self.training = True
        self._children: list[Module] = []
        self._params: list[Parameter] = []
        self._buffers: dict[str, np.ndarray] = {}

    def add(self, child: "Module") -> "Module":
        self._children.append(child)
        return child

    def param(self, suffix: str, value: np.ndarray, decay: bool = True) -> Parameter:
        p = Parameter(f"{self.name}.{suffix}", value.astype(np.float32), decay)
        self._params.append(p)
        return p

    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for child in self._children:
            out.extend(child.parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.{k}": v for k, v in self._buffers.items()}
        for child in self._children:
            out.update(child.buffers())
        return out

    def set_buffer(self, full_name: str, value: np.ndarray) -> bool:
        prefix = f"{self.name}."
        if full_name.startswith(prefix) and full_name[len(prefix):] in self._buffers:
            self._buffers[full_name[len(prefix):]] = value.copy()
            return True
        return any(child.set_buffer(full_name, value) for child in self._children)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children:
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        for p in self._params:
            p.astype(dtype)
        for k in self._buffers:
            self._buffers[k] = self._buffers[k].astype(dtype)
        for child in self._children:
            child.astype(dtype)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def num_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.value for p in self.parameters()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = {p.name: p for p in self.parameters()}
        for name, value in state.items():
            if name in params:
                p = params[name]
                if p.value.shape != value.shape:
                    raise ShapeMismatch(f"{name}: {value.shape} vs {p.value.shape}")
                p.value = np.array(value, dtype=p.value.dtype)
            elif not self.set_buffer(name, np.asarray(value)):
                raise KeyError(f"unexpected tensor {name!r}")
        missing = set(self.state_dict()) - set(state)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DepthwiseConv1d(Module):
    """Per-channel temporal convolution, "same" padding, no bias."""

    def __init__(self, name, channels, kernel, dilation=1, rng=None):
        super().__init__(name)
        if kernel % 2 != 1:
            raise ShapeMismatch("depthwise kernel width must be odd")
        rng = rng or np.random.default_rng(0)
        self.dilation = dilation
        self.weight = self.param("weight", _uniform(rng, (channels, kernel), kernel))

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.weight.value.shape[0]:
            raise ShapeMismatch(f"{self.name}: got input {x.shape}")
        self._x = x
        return kernels.depthwise_forward(x, self.weight.value, self.dilation)

    def backward(self, g):
        gx, gw = kernels.depthwise_backward(self._x, self.weight.value, g, self.dilation)
        self.weight.grad += gw
        return gx


class PointwiseConv1d(Module):
    """1x1 convolution: out[b, o, t] = bias[o] + sum_c w[o, c] x[b, c, t]."""

    def __init__(self, name, cin, cout, bias=True, rng=None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.weight = self.param("weight", _uniform(rng, (cout, cin), cin))
        self.bias = self.param("bias", _uniform(rng, (cout,), cin), decay=False) if bias else None

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.weight.value.shape[1]:
            raise ShapeMismatch(f"{self.name}: got input {x.shape}")
        self._x = x
        out = np.matmul(self.weight.value, x)
        if self.bias is not None:
            out += self.bias.value[None, :, None]
        return out

    def backward(self, g):
        b, c, t = self._x.shape
        flat_x = self._x.transpose(1, 0, 2).reshape(c, b * t)
        flat_g = g.transpose(1, 0, 2).reshape(g.shape[1], b * t)
        self.weight.grad += flat_g @ flat_x.T
        if self.bias is not None:
            self.bias.grad += g.sum(axis=(0, 2))
        return np.matmul(self.weight.value.T, g)


class BatchNorm1d(Module):
    """Per-channel normalization over (batch, time)."""

    def __init__(self, name, channels, eps=1e-5, momentum=0.1):
        super().__init__(name)
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.param("gamma", np.ones(channels), decay=False)
        self.beta = self.param("beta", np.zeros(channels), decay=False)
        self._buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self._buffers["running_var"] = np.ones(channels, dtype=np.float32)

    def forward(self, x):
        gamma = self.gamma.value[None, :, None]
        beta = self.beta.value[None, :, None]
        if not self.training:
            mean = self._buffers["running_mean"][None, :, None]
            var = self._buffers["running_var"][None, :, None]
            self._inv = 1.0 / np.sqrt(var + self.eps)
            self._xhat = (x - mean) * self._inv
            return gamma * self._xhat + beta
        n = x.shape[0] * x.shape[2]
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        m = self.momentum
        rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
        self._buffers["running_mean"] = ((1 - m) * rm + m * mean).astype(rm.dtype)
        self._buffers["running_var"] = ((1 - m) * rv + m * var * n / max(n - 1, 1)).astype(rv.dtype)
        self._inv = (1.0 / np.sqrt(var + self.eps))[None, :, None]
        self._xhat = (x - mean[None, :, None]) * self._inv
        return gamma * self._xhat + beta

    def backward(self, g):
        self.gamma.grad += np.sum(g * self._xhat, axis=(0, 2))
        self.beta.grad += g.sum(axis=(0, 2))
        gxhat = g * self.gamma.value[None, :, None]
        if not self.training:
            return gxhat * self._inv
        mean_g = gxhat.mean(axis=(0, 2), keepdims=True)
        mean_gx = np.mean(gxhat * self._xhat, axis=(0, 2), keepdims=True)
        return self._inv * (gxhat - mean_g - self._xhat * mean_gx)


class Tanh(Module):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, g):
        return g * (1.0 - self._y ** 2)


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


def residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")
    return a + b


class SeparableBlock(Module):
    """depthwise(k) -> pointwise -> BN [+ pointwise skip] -> activation.

    With ``kernel=None`` the depthwise stage is dropped (plain 1x1 conv block).
    """

    def __init__(self, name, cin, cout, kernel, activation="relu", residual=False,
                 dilation=1, rng=None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.dw = self.add(DepthwiseConv1d(f"{name}.dw", cin, kernel, dilation, rng)) if kernel else None
        self.pw = self.add(PointwiseConv1d(f"{name}.pw", cin, cout, rng=rng))
        self.bn = self.add(BatchNorm1d(f"{name}.bn", cout))
        self.skip = self.add(PointwiseConv1d(f"{name}.skip", cin, cout, rng=rng)) if residual else None
        self.act = self.add(Tanh(f"{name}.act") if activation == "tanh" else ReLU(f"{name}.act"))

    def forward(self, x):
        h = self.dw.forward(x) if self.dw else x
        h = self.bn.forward(self.pw.forward(h))
        if self.skip is not None:
            h = residual_add(h, self.skip.forward(x))
        return self.act.forward(h)

    def backward(self, g):
        g = self.act.backward(g)
        gx = self.skip.backward(g) if self.skip is not None else 0.0
        h = self.pw.backward(self.bn.backward(g))
        if self.dw:
            h = self.dw.backward(h)
        return gx + h


class GlobalAvgPool(Module):
    """(B, C, T) -> (B, C) mean over time."""

    def forward(self, x):
        self._t = x.shape[2]
        return x.mean(axis=2)

    def backward(self, g):
        return np.repeat(g[:, :, None] / self._t, self._t, axis=2)


class Linear(Module):
    def __init__(self, name, din, dout, rng=None):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.weight = self.param("weight", _uniform(rng, (dout, din), din))
        self.bias = self.param("bias", _uniform(rng, (dout,), din), decay=False)

    def forward(self, x):
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, g):
        self.weight.grad += g.T @ self._x
        self.bias.grad += g.sum(axis=0)
        return g @ self.weight.value


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, targets):
    """Per-sample cross-entropy and its gradient w.r.t. the logits.

    ``logits`` is (C,) or (B, C); ``targets`` an int or (B,) ints.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    t = np.atleast_1d(np.asarray(targets))
    n_classes = z.shape[1]
    if n_classes < 2:
        raise ShapeMismatch("need at least two classes")
    if t.shape[0] != z.shape[0]:
        raise ShapeMismatch("one target per row of logits required")
    if np.any(t < 0) or np.any(t >= n_classes):
        raise BadTarget(f"target outside [0, {n_classes})")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, t]
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    if single:
        return loss[0], grad[0]
    return loss, grad

