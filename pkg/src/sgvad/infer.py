"""Segment-level scoring with a frozen gate network."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .compute import load_tensors
from .errors import MissingAudio, TooShort
from .gates import GateNetwork, deterministic_gates, vad_score

MAX_SEGMENT_S = 100.0


@dataclass(frozen=True)
class SegmentRecord:
    audio_path: str
    start_s: float
    end_s: float
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"bad segment bounds [{self.start_s}, {self.end_s})")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class ScoredSegment:
    segment: SegmentRecord
    score: float


def split_long(seg: SegmentRecord, max_s: float = MAX_SEGMENT_S) -> list[SegmentRecord]:
    n = max(1, math.ceil(seg.duration / max_s - 1e-9))
    bounds = [seg.start_s + i * max_s for i in range(n)] + [seg.end_s]
    return [SegmentRecord(seg.audio_path, a, b, seg.label) for a, b in zip(bounds, bounds[1:])]


def load_gate_network(path) -> GateNetwork:
    """Build a gate network from an inference export or a training checkpoint."""
    tensors = load_tensors(path)
    net = GateNetwork()
    net.load_state_dict({k: v for k, v in tensors.items() if k.startswith("gate/")})
    return net.eval()


def score_features(f, net) -> float:
    """Score one normalized feature matrix: mean count of open gates per frame."""
    return vad_score(deterministic_gates(net.forward(f[None])[0]))


class Scorer:
    """Scores segments against a frozen gate network, caching decoded audio."""

    def __init__(self, net: GateNetwork, base_dir=None, max_segment_s: float = MAX_SEGMENT_S):
        self.net = net.eval()
        self.base_dir = Path(base_dir) if base_dir else None
        self.max_segment_s = max_segment_s
        self._audio = {}

    def _samples(self, audio_path):
        path = Path(audio_path)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        key = str(path)
        if key not in self._audio:
            if not path.exists():
                raise MissingAudio(f"audio file not found: {path}")
            self._audio[key] = dsp.load_wav(path).samples
        return self._audio[key]

    def _score_piece(self, seg: SegmentRecord) -> float:
        samples = self._samples(seg.audio_path)
        a = int(round(seg.start_s * dsp.SAMPLE_RATE))
        b = min(int(round(seg.end_s * dsp.SAMPLE_RATE)), samples.size)
        piece = samples[a:b]
        if piece.size < dsp.MfccConfig().window:
            raise TooShort(f"{seg.audio_path} [{seg.start_s}, {seg.end_s}) is shorter than one window")
        f = dsp.normalize_features(dsp.compute_mfcc(dsp.AudioClip(piece)))
        return score_features(f, self.net)

    def score(self, seg: SegmentRecord) -> ScoredSegment:
        pieces = split_long(seg, self.max_segment_s)
        scores = np.array([self._score_piece(p) for p in pieces])
        durations = np.array([p.duration for p in pieces])
        return ScoredSegment(seg, float(np.sum(scores * durations) / durations.sum()))

    def score_all(self, segments, jobs: int = 1) -> list[ScoredSegment]:
        if jobs <= 1:
            return [self.score(s) for s in segments]
        # forward passes cache activations on the layers, so each worker needs its own copy
        import copy

        def work(chunk):
            scorer = Scorer(copy.deepcopy(self.net), self.base_dir, self.max_segment_s)
            return [scorer.score(s) for s in chunk]

        chunks = [segments[i::jobs] for i in range(jobs)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, chunks))
        out = [None] * len(segments)
        for i, chunk in enumerate(results):
            out[i::jobs] = chunk
        return out


def score_segment(seg: SegmentRecord, net: GateNetwork, base_dir=None) -> ScoredSegment:
    return Scorer(net, base_dir).score(seg)


def decide(score: float, threshold: float) -> str:
    return "speech" if score >= threshold else "non_speech"


def read_segments(path) -> list[SegmentRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [SegmentRecord(r["audio_path"], float(r["start_s"]), float(r["end_s"]), r["label"])
                for r in reader]


def write_scored(path, scored: list[ScoredSegment]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["audio_path", "start_s", "end_s", "label", "score"])
        for s in scored:
            seg = s.segment
            writer.writerow([seg.audio_path, repr(seg.start_s), repr(seg.end_s), seg.label,
                             f"{s.score:.6f}"])
