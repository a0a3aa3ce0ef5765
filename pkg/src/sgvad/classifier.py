"""Auxiliary speech-event classifier (three residual 64-channel blocks), used only in training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compute import GlobalAvgPool, Linear, Module, SeparableBlock
from .errors import ShapeMismatch
from .gates import GateModelConfig, GateNetwork

BACKGROUND = 0


@dataclass(frozen=True)
class ClassifierConfig:
    in_channels: int = 32
    channels: int = 64
    kernel_widths: tuple = (13, 15, 17)
    epilogue_kernel: int = 29
    epilogue_dilation: int = 2
    epilogue_channels: int = 128
    n_classes: int = 36

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")


class Classifier(Module):
    def __init__(self, cfg: ClassifierConfig = ClassifierConfig(), seed: int = 1):
        super().__init__("classifier")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        cin = cfg.in_channels
        self.blocks = []
        for i, k in enumerate(cfg.kernel_widths, start=1):
            self.blocks.append(self.add(SeparableBlock(
                f"classifier/block{i}", cin, cfg.channels, k, "relu", residual=True, rng=rng)))
            cin = cfg.channels
        self.blocks.append(self.add(SeparableBlock(
            "classifier/epilogue1", cin, cfg.epilogue_channels, cfg.epilogue_kernel, "relu",
            dilation=cfg.epilogue_dilation, rng=rng)))
        self.blocks.append(self.add(SeparableBlock(
            "classifier/epilogue2", cfg.epilogue_channels, cfg.epilogue_channels, None, "relu", rng=rng)))
        self.pool = self.add(GlobalAvgPool("classifier/pool"))
        self.head = self.add(Linear("classifier/head", cfg.epilogue_channels, cfg.n_classes, rng=rng))

    def forward(self, x):
        """(B, 32, T) gated features -> (B, n_classes) logits."""
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"classifier expects (B, {self.cfg.in_channels}, T), got {x.shape}")
        h = x.astype(self.head.weight.value.dtype, copy=False)
        for block in self.blocks:
            h = block.forward(h)
        return self.head.forward(self.pool.forward(h))

    def backward(self, g):
        g = self.pool.backward(self.head.backward(g))
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g


def classify(x_gated, net: Classifier, mode: str = "eval"):
    net.train(mode == "train")
    single = np.ndim(x_gated) == 2
    logits = net.forward(x_gated[None] if single else x_gated)
    return logits[0] if single else logits


def count_params(gate_cfg: GateModelConfig = GateModelConfig(),
                 clf_cfg: ClassifierConfig = ClassifierConfig()) -> dict:
    gate = GateNetwork(gate_cfg).num_params()
    clf = Classifier(clf_cfg).num_params()
    return {"gate": gate, "classifier": clf, "total": gate + clf}
