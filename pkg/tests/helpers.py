"""Independent oracles shared by the test modules.

Nothing here imports the code paths it is used to check.
"""
import math

import numpy as np


def reference_mfcc(samples, sr=16000, win=400, hop=160, nfft=512, n_mel=64, n_mfcc=32,
                   fmin=0.0, fmax=8000.0, floor=1e-10):
    """Frame-by-frame MFCC with an explicit DFT, loop-built filterbank and DCT matrix."""
    x = np.asarray(samples, dtype=np.float64)
    n_frames = 1 + (len(x) - win) // hop
    window = np.array([0.5 * (1 - math.cos(2 * math.pi * i / win)) for i in range(win)])
    n_bins = nfft // 2 + 1
    k = np.arange(n_bins)[:, None]
    n = np.arange(nfft)[None, :]
    cos_m = np.cos(2 * np.pi * k * n / nfft)
    sin_m = np.sin(2 * np.pi * k * n / nfft)

    def mel(f):
        return 2595.0 * math.log10(1 + f / 700.0)

    def inv_mel(m):
        return 700.0 * (10 ** (m / 2595.0) - 1)

    lo, hi = mel(fmin), mel(fmax)
    corners = [inv_mel(lo + (hi - lo) * i / (n_mel + 1)) for i in range(n_mel + 2)]
    fb = np.zeros((n_mel, n_bins))
    for m in range(n_mel):
        left, center, right = corners[m], corners[m + 1], corners[m + 2]
        for b in range(n_bins):
            f = b * sr / nfft
            if left < f <= center:
                fb[m, b] = (f - left) / (center - left)
            elif center < f < right:
                fb[m, b] = (right - f) / (right - center)

    dct_m = np.zeros((n_mfcc, n_mel))
    for q in range(n_mfcc):
        scale = math.sqrt(1.0 / n_mel) if q == 0 else math.sqrt(2.0 / n_mel)
        for j in range(n_mel):
            dct_m[q, j] = scale * math.cos(math.pi * q * (2 * j + 1) / (2 * n_mel))

    out = np.zeros((n_mfcc, n_frames))
    for t in range(n_frames):
        frame = np.zeros(nfft)
        frame[:win] = x[t * hop:t * hop + win] * window
        power = (cos_m @ frame) ** 2 + (sin_m @ frame) ** 2
        out[:, t] = dct_m @ np.log(fb @ power + floor)
    return out


def brute_force_auc(scores, positives, weights=None):
    """All-pairs Mann-Whitney statistic with half credit for ties."""
    scores = list(scores)
    w = [1.0] * len(scores) if weights is None else list(weights)
    num = den = 0.0
    for i, (si, pi) in enumerate(zip(scores, positives)):
        if not pi:
            continue
        for j, (sj, pj) in enumerate(zip(scores, positives)):
            if pj:
                continue
            pair = w[i] * w[j]
            den += pair
            num += pair * (1.0 if si > sj else 0.5 if si == sj else 0.0)
    return num / den


def numeric_grad(f, array, index, h=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``array[index]`` (modified in place)."""
    old = array[index]
    array[index] = old + h
    plus = f()
    array[index] = old - h
    minus = f()
    array[index] = old
    return (plus - minus) / (2 * h)


GRAD_FLOOR = 1e-5


def rel_error(analytic, numeric, floor=GRAD_FLOOR):
    """max |a - n| / max(|a|, |n|, floor).

    The floor keeps structurally zero gradients (a bias feeding batch norm)
    from dividing finite-difference round-off by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def sample_indices(shape, rng, limit):
    """All indices of a small array, or ``limit`` random ones of a large one."""
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= limit else rng.choice(size, limit, replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def check_module_grads(module, x, rng, h=1e-5, param_limit=12, input_limit=64):
    """Max relative error of a module's backward pass against central differences.

    The objective is ``sum(R * module.forward(x))`` for a fixed random ``R``.
    Returns the worst relative error over inputs and sampled parameters.
    """
    module.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    r = rng.standard_normal(module.forward(x).shape)

    def objective():
        return float(np.sum(r * module.forward(x)))

    module.zero_grad()
    module.forward(x)
    gx = module.backward(r)
    worst = 0.0
    idx = sample_indices(x.shape, rng, input_limit)
    num = [numeric_grad(objective, x, i, h) for i in idx]
    worst = max(worst, rel_error([gx[i] for i in idx], num))
    for p in module.parameters():
        idx = sample_indices(p.value.shape, rng, param_limit)
        num = [numeric_grad(objective, p.value, i, h) for i in idx]
        worst = max(worst, rel_error([p.grad[i] for i in idx], num))
    return worst


# acceptance verdicts, printed by the terminal-summary hook in conftest.py
ACCEPTANCE_LINES = []


def record_criterion(label, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
