"""Manifests, batching, the joint objective and the training loop.

Four objectives are supported (``TrainConfig.mode``):

* ``full``: cross-entropy for every sample plus the expected-L0 gate
  penalty on background samples only.
* ``no_lsg``: cross-entropy only.
* ``unconditional_lsg``: cross-entropy plus the gate penalty on every sample.
* ``regression``: no classifier; mean squared error between the normalized
  gate score and the speech/non-speech label.
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .classifier import BACKGROUND, Classifier, ClassifierConfig
from .compute import LrSchedule, SgdConfig, load_tensors, lr_at, save_tensors, sgd_step
from .compute.layers import softmax_cross_entropy
from .errors import ConfigError, EmptyBatch, ModeMismatch, NonFiniteLoss
from .gates import (SIGMA, GateModelConfig, GateNetwork, clamp_gates, deterministic_gates,
                    expected_l0, expected_l0_grad, gate_grad_mask)

log = logging.getLogger(__name__)

MODES = ("full", "regression", "no_lsg", "unconditional_lsg")
METRICS_HEADER = "epoch,step,lr,train_loss,val_acc,bg_gate_rate,speech_gate_rate"


@dataclass
class ManifestEntry:
    audio_path: str
    label: int
    duration_s: float


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    mode: str = "full"
    seed: int = 0
    n_classes: int = 36
    momentum: float = 0.9
    weight_decay: float = 1e-3
    warmup_ratio: float = 0.05
    hold_ratio: float = 0.45
    max_lr: float = 1e-2
    min_lr: float = 1e-4
    decay_power: float = 2.0
    time_shift_ms: float = 5.0
    noise_db_min: float = -90.0
    noise_db_max: float = -46.0
    noise_prob: float = 0.8
    specaug_time_masks: int = 2
    specaug_time_width: int = 25
    specaug_freq_masks: int = 2
    specaug_freq_width: int = 15
    speccutout_rects: int = 5
    max_background_s: float = 0.63
    crop_s: float = 0.63

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, not {self.mode!r}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        # validate the nested configs eagerly
        self.sgd
        self.augment

    @property
    def sgd(self) -> SgdConfig:
        return SgdConfig(self.momentum, self.weight_decay)

    @property
    def augment(self) -> dsp.AugmentConfig:
        return dsp.AugmentConfig(
            self.time_shift_ms, self.noise_db_min, self.noise_db_max, self.noise_prob,
            self.specaug_time_masks, self.specaug_time_width, self.specaug_freq_masks,
            self.specaug_freq_width, self.speccutout_rects)

    def schedule(self, total_steps: int) -> LrSchedule:
        return LrSchedule(total_steps, self.warmup_ratio, self.hold_ratio,
                          self.max_lr, self.min_lr, self.decay_power)

    @property
    def crop_frames(self) -> int:
        return dsp.n_frames(int(round(self.crop_s * dsp.SAMPLE_RATE)))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    if path in (None, "default"):
        return TrainConfig()
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# manifests and data

def read_manifest(path) -> list[ManifestEntry]:
    """Tab-separated ``audio_path, label, duration_s``; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        audio = Path(parts[0])
        if not audio.is_absolute():
            audio = path.parent / audio
        entries.append(ManifestEntry(str(audio), int(parts[1]), float(parts[2])))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    return entries


def write_manifest(path, entries) -> None:
    Path(path).write_text("".join(f"{e.audio_path}\t{e.label}\t{e.duration_s:.6f}\n" for e in entries))


def split_background(clip: dsp.AudioClip, max_s: float = 0.63) -> list[dsp.AudioClip]:
    """Cut into consecutive chunks of at most ``max_s``; drop a tail shorter
    than one analysis window."""
    size = int(round(max_s * clip.sample_rate))
    window = dsp.MfccConfig().window
    chunks = []
    for start in range(0, len(clip), size):
        piece = clip.samples[start:start + size]
        if piece.size >= window:
            chunks.append(dsp.AudioClip(piece, clip.sample_rate))
    return chunks


def load_examples(entries, max_background_s: float | None = 0.63):
    """Read audio for manifest entries as ``(samples, label)`` pairs, splitting
    background clips into short chunks."""
    examples = []
    for e in entries:
        clip = dsp.load_wav(e.audio_path)
        if e.label == BACKGROUND and max_background_s:
            examples.extend((c.samples, e.label) for c in split_background(clip, max_background_s))
        else:
            examples.append((clip.samples, e.label))
    return examples


def fit_frames(f: np.ndarray, frames: int, rng: np.random.Generator | None) -> np.ndarray:
    """Random crop (center crop without rng) or right zero-pad to ``frames``."""
    t = f.shape[1]
    if t > frames:
        start = int(rng.integers(0, t - frames + 1)) if rng is not None else (t - frames) // 2
        return f[:, start:start + frames]
    if t < frames:
        return np.pad(f, ((0, 0), (0, frames - t)))
    return f


def featurize(samples, cfg: TrainConfig, rng=None, augment=True):
    clip = dsp.AudioClip(samples)
    aug = cfg.augment
    if augment:
        clip = dsp.add_white_noise(dsp.time_shift(clip, rng, aug), rng, aug)
    f = dsp.normalize_features(dsp.compute_mfcc(clip))
    if augment:
        f = dsp.spec_cutout(dsp.spec_augment(f, rng, aug), rng, aug)
    return f


def make_batch(examples, rng: np.random.Generator, cfg: TrainConfig, augment: bool = True):
    """Stack examples into (B, 32, crop_frames) features and (B,) labels."""
    if not examples:
        raise EmptyBatch("cannot build a batch from zero examples")
    frames = cfg.crop_frames
    feats = [fit_frames(featurize(s, cfg, rng, augment), frames, rng) for s, _ in examples]
    labels = np.array([y for _, y in examples], dtype=np.int64)
    return np.stack(feats).astype(np.float32), labels


# --------------------------------------------------------------------------
# objective

def gate_penalty_weights(labels, mode: str) -> np.ndarray:
    labels = np.asarray(labels)
    if mode == "full":
        return (labels == BACKGROUND).astype(np.float64)
    if mode == "unconditional_lsg":
        return np.ones(labels.shape)
    return np.zeros(labels.shape)


def combine_losses(ce, lsg, labels, mode: str = "full") -> float:
    """Batch mean of ``ce + w * lsg`` with the per-mode indicator ``w``."""
    ce = np.asarray(ce, dtype=np.float64)
    lsg = np.asarray(lsg, dtype=np.float64)
    return float(np.mean(ce + gate_penalty_weights(labels, mode) * lsg))


def _check_mode(mode, classifier):
    if mode not in MODES:
        raise ModeMismatch(f"unknown mode {mode!r}")
    if mode == "regression" and classifier is not None:
        raise ModeMismatch("regression mode trains the gate network alone; drop the classifier")
    if mode != "regression" and classifier is None:
        raise ModeMismatch(f"mode {mode!r} needs the auxiliary classifier")


def loss_and_grads(x, labels, gate: GateNetwork, classifier: Classifier | None, mode: str,
                   noise: np.ndarray, sigma: float = SIGMA, backward: bool = True):
    """Forward the batch, optionally backpropagate, and return ``(loss, parts)``.

    ``noise`` is the gate perturbation with the shape of ``x``. Gradients are
    accumulated into the parameters of both networks.
    """
    _check_mode(mode, classifier)
    labels = np.asarray(labels)
    b = x.shape[0]
    mu = gate.forward(x)
    z = clamp_gates(mu, noise.astype(mu.dtype, copy=False))
    mask = gate_grad_mask(z)
    parts = {}
    if mode == "regression":
        score = z.mean(axis=(1, 2))
        target = (labels != BACKGROUND).astype(mu.dtype)
        err = score - target
        loss = float(np.mean(err.astype(np.float64) ** 2))
        parts["mse"] = loss
        if backward:
            dz = np.broadcast_to((2.0 * err / b)[:, None, None] / (z.shape[1] * z.shape[2]), z.shape)
            gate.backward((dz * mask).astype(mu.dtype))
        return loss, parts
    logits = classifier.forward(x * z)
    ce, dlogits = softmax_cross_entropy(logits, labels)
    lsg = expected_l0(mu, sigma)
    weights = gate_penalty_weights(labels, mode)
    loss = combine_losses(ce, lsg, labels, mode)
    parts.update(ce=float(np.mean(ce, dtype=np.float64)), lsg=float(np.mean(lsg, dtype=np.float64)))
    if backward:
        dxg = classifier.backward((dlogits / b).astype(mu.dtype))
        dmu = dxg * x * mask
        if np.any(weights):
            dmu = dmu + (weights[:, None, None] / b) * expected_l0_grad(mu, sigma)
        gate.backward(dmu.astype(mu.dtype))
    return loss, parts


def total_loss(x, labels, gate, classifier, mode, noise, sigma=SIGMA) -> float:
    """Objective value without touching gradients."""
    loss, _ = loss_and_grads(x, labels, gate, classifier, mode, noise, sigma, backward=False)
    return loss


# --------------------------------------------------------------------------
# training loop

def batch_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


@dataclass
class EpochMetrics:
    epoch: int
    step: int
    lr: float
    train_loss: float
    val_acc: float
    bg_gate_rate: float
    speech_gate_rate: float

    def line(self) -> str:
        return (f"{self.epoch},{self.step},{self.lr:.8g},{self.train_loss:.8g},{self.val_acc:.8g},"
                f"{self.bg_gate_rate:.8g},{self.speech_gate_rate:.8g}")


class Trainer:
    """Owns both networks, optimizer state and the step counter."""

    def __init__(self, cfg: TrainConfig, train_examples, val_examples=(),
                 gate_cfg: GateModelConfig = GateModelConfig()):
        if not train_examples:
            raise EmptyBatch("training set is empty")
        self.cfg = cfg
        self.train_examples = list(train_examples)
        self.val_examples = list(val_examples)
        self.gate = GateNetwork(gate_cfg, seed=cfg.seed)
        self.classifier = None
        if cfg.mode != "regression":
            self.classifier = Classifier(ClassifierConfig(n_classes=cfg.n_classes), seed=cfg.seed + 1)
        self.steps_per_epoch = math.ceil(len(self.train_examples) / cfg.batch_size)
        self.total_steps = cfg.epochs * self.steps_per_epoch
        self.sched = cfg.schedule(self.total_steps)
        self.step_count = 0
        self._val_cache = None
        self._order_epoch = None

    @property
    def params(self):
        out = self.gate.parameters()
        if self.classifier is not None:
            out += self.classifier.parameters()
        return out

    def _order(self, epoch):
        if self._order_epoch != epoch:
            self._perm = np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.train_examples))
            self._order_epoch = epoch
        return self._perm

    def step(self) -> float:
        epoch, index = divmod(self.step_count, self.steps_per_epoch)
        bs = self.cfg.batch_size
        idx = self._order(epoch)[index * bs:(index + 1) * bs]
        rng = batch_rng(self.cfg.seed, epoch, index)
        x, y = make_batch([self.train_examples[i] for i in idx], rng, self.cfg)
        noise = rng.normal(0.0, self.gate.cfg.sigma, size=x.shape).astype(np.float32)
        self.gate.train()
        if self.classifier is not None:
            self.classifier.train()
        loss, parts = loss_and_grads(x, y, self.gate, self.classifier, self.cfg.mode, noise,
                                     self.gate.cfg.sigma)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss {loss} at step {self.step_count} (epoch {epoch}, batch "
                                f"{index}); parts={parts}; labels={np.bincount(y).tolist()}")
        self.lr = lr_at(self.step_count, self.sched)
        sgd_step(self.params, self.lr, self.cfg.sgd)
        self.step_count += 1
        return loss

    # validation ----------------------------------------------------------

    def _val_groups(self):
        if self._val_cache is None:
            groups = {}
            for samples, label in self.val_examples:
                f = featurize(samples, self.cfg, augment=False)
                groups.setdefault(f.shape[1], []).append((f, label))
            self._val_cache = [(np.stack([f for f, _ in g]), np.array([y for _, y in g]))
                               for g in groups.values()]
        return self._val_cache

    def validate(self):
        """Return (accuracy, background open-gate rate, speech open-gate rate)."""
        if not self.val_examples:
            return float("nan"), float("nan"), float("nan")
        self.gate.eval()
        if self.classifier is not None:
            self.classifier.eval()
        correct, rates, labels = 0, [], []
        for x, y in self._val_groups():
            z = deterministic_gates(self.gate.forward(x))
            rate = z.mean(axis=(1, 2))
            if self.classifier is not None:
                pred = self.classifier.forward(x * z).argmax(axis=1)
                correct += int(np.sum(pred == y))
            else:
                correct += int(np.sum((rate >= 0.5) == (y != BACKGROUND)))
            rates.append(rate)
            labels.append(y)
        rates = np.concatenate(rates)
        labels = np.concatenate(labels)
        bg = labels == BACKGROUND
        bg_rate = float(rates[bg].mean()) if bg.any() else float("nan")
        sp_rate = float(rates[~bg].mean()) if (~bg).any() else float("nan")
        return correct / labels.size, bg_rate, sp_rate

    # state ---------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        tensors = dict(self.gate.state_dict())
        if self.classifier is not None:
            tensors.update(self.classifier.state_dict())
        for p in self.params:
            tensors[f"optim/{p.name}"] = p.momentum_buf
        tensors["meta/step"] = np.array([self.step_count], dtype=np.float32)
        tensors["meta/n_classes"] = np.array([self.cfg.n_classes], dtype=np.float32)
        tensors["meta/config_sha256"] = np.frombuffer(self.cfg.digest(), dtype=np.uint8).astype(np.float32)
        return tensors

    def load_state(self, tensors: dict[str, np.ndarray]):
        digest = bytes(tensors["meta/config_sha256"].astype(np.uint8))
        if digest != self.cfg.digest():
            log.warning("checkpoint was written with a different training config")
        model = {k: v for k, v in tensors.items() if not k.startswith(("optim/", "meta/"))}
        self.gate.load_state_dict({k: v for k, v in model.items() if k.startswith("gate/")})
        if self.classifier is not None:
            self.classifier.load_state_dict({k: v for k, v in model.items() if k.startswith("classifier/")})
        for p in self.params:
            p.momentum_buf = tensors[f"optim/{p.name}"].astype(p.value.dtype)
        self.step_count = int(tensors["meta/step"][0])

    def save(self, path):
        save_tensors(path, self.state())

    def load(self, path):
        self.load_state(load_tensors(path))

    def export_inference(self, path):
        save_tensors(path, self.gate.state_dict())

    # driver --------------------------------------------------------------

    def run(self, out_path=None, metrics_path=None, on_epoch=None) -> list[EpochMetrics]:
        """Train for all remaining epochs, keeping the best-validation checkpoint."""
        history = []
        best = -1.0
        if metrics_path is not None:
            Path(metrics_path).write_text(METRICS_HEADER + "\n")
        while self.step_count < self.total_steps:
            epoch = self.step_count // self.steps_per_epoch
            losses = []
            while self.step_count < (epoch + 1) * self.steps_per_epoch:
                losses.append(self.step())
            acc, bg, sp = self.validate()
            m = EpochMetrics(epoch, self.step_count, self.lr, float(np.mean(losses)), acc, bg, sp)
            history.append(m)
            log.info(m.line())
            if metrics_path is not None:
                with open(metrics_path, "a") as fh:
                    fh.write(m.line() + "\n")
            # ties go to the later epoch
            score = acc if math.isfinite(acc) else 0.0
            if out_path is not None and score >= best:
                best = score
                self.save(out_path)
            if on_epoch is not None:
                on_epoch(m)
        return history


def train_run(cfg: TrainConfig, train_manifest, val_manifest, out_path, metrics_path=None):
    """Load manifests, train, write the best checkpoint and the metrics log."""
    train_entries = read_manifest(train_manifest)
    val_entries = read_manifest(val_manifest)
    n_classes = max(e.label for e in train_entries + val_entries) + 1
    if n_classes > cfg.n_classes:
        raise ConfigError(f"manifests use {n_classes} classes but n_classes = {cfg.n_classes}")
    trainer = Trainer(cfg, load_examples(train_entries, cfg.max_background_s),
                      load_examples(val_entries, cfg.max_background_s))
    metrics_path = metrics_path or f"{out_path}.metrics.csv"
    history = trainer.run(out_path, metrics_path)
    return trainer, history
