"""Gate network: predicts per-feature gate logits and turns them into gates.

During training the gates are stochastic, ``z = clamp(0.5 + mu + eps, 0, 1)``
with ``eps ~ N(0, sigma^2)``; at inference they are hard 0/1 decisions and
the voice-activity score is the mean number of open gates per frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .compute import Module, PointwiseConv1d, SeparableBlock
from .errors import ShapeMismatch

SIGMA = 0.5
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GateModelConfig:
    channels: int = 32
    kernel_widths: tuple = (13, 15, 17)
    sigma: float = SIGMA

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if len(self.kernel_widths) != 3:
            raise ValueError("gate network has exactly three separable blocks")


@dataclass
class GateOutput:
    mu: np.ndarray
    z: np.ndarray
    noise: np.ndarray | None = field(default=None, repr=False)


class GateNetwork(Module):
    """Separable conv stack producing ``mu`` with the same shape as its input.

    block1: sep-conv -> BN -> tanh
    block2, block3: sep-conv -> BN, + 1x1 skip, tanh
    head: 1x1 conv (channels -> channels)
    """

    def __init__(self, cfg: GateModelConfig = GateModelConfig(), seed: int = 0):
        super().__init__("gate")
        rng = np.random.default_rng(seed)
        c = cfg.channels
        k1, k2, k3 = cfg.kernel_widths
        self.cfg = cfg
        self.blocks = [
            self.add(SeparableBlock("gate/block1", c, c, k1, "tanh", residual=False, rng=rng)),
            self.add(SeparableBlock("gate/block2", c, c, k2, "tanh", residual=True, rng=rng)),
            self.add(SeparableBlock("gate/block3", c, c, k3, "tanh", residual=True, rng=rng)),
        ]
        self.head = self.add(PointwiseConv1d("gate/head", c, c, rng=rng))

    def forward(self, x):
        """(B, C, T) features -> (B, C, T) gate logits ``mu``."""
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1] != self.cfg.channels:
            raise ShapeMismatch(f"expected {self.cfg.channels} channels, got {x.shape}")
        h = x.astype(self.head.weight.value.dtype, copy=False)
        for block in self.blocks:
            h = block.forward(h)
        return self.head.forward(h)

    def backward(self, g):
        g = self.head.backward(g)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g


def gate_forward(f, net: GateNetwork, mode: str = "eval"):
    """Run the gate network on one (C, T) matrix or a (B, C, T) batch."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    net.train(mode == "train")
    single = np.ndim(f) == 2
    mu = net.forward(f)
    return mu[0] if single else mu


def clamp_gates(mu, noise):
    """Gates ``clamp(0.5 + mu + noise, 0, 1)``."""
    return np.clip(0.5 + mu + noise, 0.0, 1.0)


def gate_grad_mask(z):
    """Straight-through derivative dz/dmu: 1 strictly inside (0, 1), else 0."""
    return ((z > 0.0) & (z < 1.0)).astype(z.dtype)


def sample_gates(mu, rng: np.random.Generator, sigma: float = SIGMA, return_noise: bool = False):
    noise = rng.normal(0.0, sigma, size=np.shape(mu)).astype(np.asarray(mu).dtype)
    z = clamp_gates(mu, noise)
    return (z, noise) if return_noise else z


def deterministic_gates(mu):
    """Inference gates: open (1) where ``mu >= 0``, closed (0) otherwise."""
    mu = np.asarray(mu)
    return (mu >= 0).astype(mu.dtype if mu.dtype.kind == "f" else np.float32)


def expected_l0(mu, sigma: float = SIGMA):
    """Mean probability that a gate is non-zero, ``mean(Phi((0.5 + mu) / sigma))``.

    For a batch (B, C, T) returns one value per sample.
    """
    mu = np.asarray(mu, dtype=np.float64)
    p = ndtr((0.5 + mu) / sigma)
    return p.mean(axis=(-2, -1)) if mu.ndim >= 2 else p.mean()


def expected_l0_grad(mu, sigma: float = SIGMA):
    """d expected_l0 / d mu, elementwise (per-sample normalization included)."""
    mu = np.asarray(mu, dtype=np.float64)
    u = (0.5 + mu) / sigma
    count = mu.shape[-2] * mu.shape[-1] if mu.ndim >= 2 else mu.size
    return np.exp(-0.5 * u * u) / (_SQRT_2PI * sigma * count)


def gate_input(f, z):
    f = np.asarray(f)
    z = np.asarray(z)
    if f.shape != z.shape:
        raise ShapeMismatch(f"features {f.shape} vs gates {z.shape}")
    return f * z


def vad_score(z) -> float:
    """Open gates per frame averaged over time, in [0, channels]."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeMismatch(f"expected a (channels, frames) gate matrix, got {z.shape}")
    return float(z.sum(axis=0).mean())
