"""AUC-ROC over scored segments and a synthetic corpus for desk-scale runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .errors import DegenerateLabels, UnmappedLabel
from .train import ManifestEntry, write_manifest


@dataclass
class LabeledScore:
    score: float
    positive: bool
    weight: float = 1.0


def auc_roc(scores, positives, weights=None) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), optionally pair-weighted by
    ``weights[i] * weights[j]``.

    Computed in O(n log n) by sweeping distinct score values.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    w = np.ones_like(scores) if weights is None else np.asarray(weights, dtype=np.float64)
    if scores.shape != pos.shape or scores.shape != w.shape:
        raise ValueError("scores, labels and weights must have equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    w_pos, w_neg = w[pos].sum(), w[~pos].sum()
    if not pos.any() or pos.all() or w_pos <= 0 or w_neg <= 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative")
    uniq, inv = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inv, weights=w * pos, minlength=uniq.size)
    neg_at = np.bincount(inv, weights=w * ~pos, minlength=uniq.size)
    neg_below = np.cumsum(neg_at) - neg_at
    credit = np.sum(pos_at * (neg_below + 0.5 * neg_at))
    return float(credit / (w_pos * w_neg))


def auc_from_items(items: list[LabeledScore], weighted: bool = False) -> float:
    return auc_roc([i.score for i in items], [i.positive for i in items],
                   [i.weight for i in items] if weighted else None)


# --------------------------------------------------------------------------
# synthetic corpus

def class_f0(label: int, n_speech_classes: int) -> float:
    """Fundamental frequency for speech class ``label`` (1-based), 120-300 Hz."""
    return 120.0 + (label - 1) * 180.0 / max(n_speech_classes - 1, 1)


def synth_speech(rng, f0, n, sr=dsp.SAMPLE_RATE, n_harmonics=None, am_hz=None, jitter=0.0):
    """Harmonic tone complex with a slow amplitude envelope."""
    t = np.arange(n) / sr
    n_harmonics = n_harmonics or int(rng.integers(4, 9))
    am_hz = am_hz or rng.uniform(4.0, 8.0)
    f0 = f0 * (1.0 + jitter)
    tone = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        if k * f0 >= sr / 2:
            break
        tone += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * am_hz * t + rng.uniform(0, 2 * np.pi))
    return tone * envelope


def pink_noise(rng, n):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.arange(spectrum.size, dtype=np.float64)
    freqs[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(freqs), n)


def synth_background(rng, n, sr=dsp.SAMPLE_RATE):
    kind = int(rng.integers(0, 3))
    if kind == 0:
        x = rng.standard_normal(n)
    elif kind == 1:
        x = pink_noise(rng, n)
    else:
        t = np.arange(n) / sr
        x = rng.standard_normal(n) * (0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) * t))
    return x


def _scale_rms(x, rms):
    return x * (rms / max(np.sqrt(np.mean(x ** 2)), 1e-12))


def toy_clip(rng, label, n_speech_classes, sr=dsp.SAMPLE_RATE) -> dsp.AudioClip:
    n = int(rng.integers(int(0.5 * sr), sr + 1))
    level = rng.uniform(0.05, 0.2)
    if label == 0:
        x = _scale_rms(synth_background(rng, n, sr), level)
    else:
        tone = synth_speech(rng, class_f0(label, n_speech_classes), n, sr,
                            jitter=rng.uniform(-0.02, 0.02))
        floor = synth_background(rng, n, sr)
        snr_db = rng.uniform(10.0, 30.0)
        x = _scale_rms(tone, level) + _scale_rms(floor, level * 10 ** (-snr_db / 20))
    return dsp.AudioClip(np.clip(x, -1.0, 1.0).astype(np.float32), sr)


def class_name(label: int) -> str:
    return "background" if label == 0 else f"speech{label}"


def make_toy_corpus(out_dir, seed: int = 0, n_per_class: int = 200, n_speech_classes: int = 5,
                    split=(0.7, 0.15, 0.15)) -> dict:
    """Write WAV clips, train/val/test manifests, a test segments CSV and a
    label map into ``out_dir``. Returns the written paths."""
    if n_speech_classes < 2:
        raise ValueError("need at least two speech classes")
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    splits = {"train": [], "val": [], "test": []}
    n_train = int(round(split[0] * n_per_class))
    n_val = int(round(split[1] * n_per_class))
    for label in range(n_speech_classes + 1):
        for i in range(n_per_class):
            clip = toy_clip(rng, label, n_speech_classes)
            rel = f"audio/{class_name(label)}_{i:04d}.wav"
            dsp.write_wav(out / rel, clip)
            part = "train" if i < n_train else "val" if i < n_train + n_val else "test"
            splits[part].append(ManifestEntry(rel, label, clip.duration))
    paths = {}
    for part, entries in splits.items():
        paths[part] = out / f"{part}.tsv"
        write_manifest(paths[part], entries)
    paths["segments"] = out / "test_segments.csv"
    with open(paths["segments"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["audio_path", "start_s", "end_s", "label"])
        for e in splits["test"]:
            writer.writerow([e.audio_path, "0", f"{e.duration_s:.6f}", class_name(e.label)])
    paths["map"] = out / "label_map.tsv"
    paths["map"].write_text("".join(
        f"{class_name(k)}\t{'neg' if k == 0 else 'pos'}\n" for k in range(n_speech_classes + 1)))
    return paths


# --------------------------------------------------------------------------
# report

def read_label_map(path) -> dict[str, bool]:
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        label, _, kind = line.partition("\t")
        kind = kind.strip()
        if kind not in ("pos", "neg"):
            raise ValueError(f"{path}:{lineno}: expected 'pos' or 'neg', got {kind!r}")
        mapping[label] = kind == "pos"
    return mapping


def read_scored(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("start_s", "end_s", "score"):
            row[key] = float(row[key])
    return rows


def evaluate(rows, mapping: dict[str, bool], bins: int = 8) -> dict:
    """AUC (unweighted and duration-weighted), counts and per-label histograms."""
    missing = sorted({r["label"] for r in rows} - set(mapping))
    if missing:
        raise UnmappedLabel(f"labels missing from map: {missing}")
    scores = np.array([r["score"] for r in rows])
    positive = np.array([mapping[r["label"]] for r in rows])
    durations = np.array([r["end_s"] - r["start_s"] for r in rows])
    edges = np.linspace(0.0, 32.0, bins + 1)
    histograms = {label: np.histogram(scores[[r["label"] == label for r in rows]], edges)[0].tolist()
                  for label in sorted({r["label"] for r in rows})}
    return {
        "auc": auc_roc(scores, positive),
        "auc_weighted": auc_roc(scores, positive, durations),
        "n_pos": int(positive.sum()),
        "n_neg": int((~positive).sum()),
        "edges": edges.tolist(),
        "histograms": histograms,
    }


def format_report(report: dict, weighted: bool = False) -> str:
    key = "auc_weighted" if weighted else "auc"
    lines = [f"AUC-ROC {'(duration-weighted)' if weighted else '(per segment)'}: {report[key]:.6f}",
             f"AUC-ROC unweighted={report['auc']:.6f} weighted={report['auc_weighted']:.6f}",
             f"segments: {report['n_pos']} positive, {report['n_neg']} negative",
             "score histogram (bins over [0, 32]):",
             "  label".ljust(16) + " ".join(f"{e:>5.0f}" for e in report["edges"][:-1])]
    for label, counts in report["histograms"].items():
        lines.append(f"  {label}".ljust(16) + " ".join(f"{c:>5d}" for c in counts))
    return "\n".join(lines) + "\n"
