"""Independent oracles shared across tests: brute-force contrastive losses,
central finite differences, and a tiny float64 model factory.

These deliberately avoid the library's kernels (plain loops over math.exp)
so they stay independent of the code paths they check.
"""

import math

import numpy as np

from sclbench.encoder import Encoder, EncoderConfig, Vocabulary
from sclbench.trainer import Bundle


def cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def ntxent_brute(reps, labels, tau, weights=None):
    """Triple-loop NTXent (sum over anchors); weights gives the LCL variant."""
    n2 = len(reps)
    total = 0.0
    for i in range(n2):
        pos = [k for k in range(n2) if k != i and labels[k] == labels[i]]
        if not pos:
            continue
        anchor = 0.0
        for j in pos:
            w_num = weights[i, labels[i]] if weights is not None else 1.0
            num = w_num * math.exp(cos(reps[i], reps[j]) / tau)
            den = sum((weights[i, labels[k]] if weights is not None else 1.0)
                      * math.exp(cos(reps[i], reps[k]) / tau)
                      for k in range(n2) if k != i)
            anchor += -math.log(num / den)
        total += anchor / len(pos)
    return total


def infonce_brute(z, tau, both_directions=True):
    n2 = len(z)
    n = n2 // 2
    anchors = range(n2) if both_directions else range(n)
    terms = []
    for i in anchors:
        j = i + n if i < n else i - n
        num = math.exp(cos(z[i], z[j]) / tau)
        den = sum(math.exp(cos(z[i], z[k]) / tau) for k in range(n2) if k != i)
        terms.append(-math.log(num / den))
    return sum(terms) / len(terms)


def cross_entropy_brute(probs, labels):
    return float(np.mean([-math.log(max(probs[i, y], 1e-12)) for i, y in enumerate(labels)]))


def central_diff(f, tensor, step=1e-5):
    """Central finite differences of scalar f() w.r.t. every entry of a
    parameter Tensor, mutating-and-restoring in place."""
    base = tensor.values
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = f()
        flat[idx] = orig - step
        down = f()
        flat[idx] = orig
        gflat[idx] = (up - down) / (2 * step)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def tiny_vocab(n_tokens=8):
    return Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + [f"t{i}" for i in range(n_tokens)])


def tiny_bundle(seed=0, num_classes=2, d_h=16, with_weighting=False, dropout=0.1,
                dtype="float64", max_len=6, num_layers=1):
    """Verification-grade (float64) model small enough for full finite-diff."""
    rng = np.random.default_rng(seed)
    vocab = tiny_vocab()
    cfg = EncoderConfig(vocab_size=vocab.size, num_classes=num_classes, d_h=d_h,
                        num_layers=num_layers, num_heads=2, d_ff=d_h, d_p=8,
                        max_len=max_len, dropout=dropout, dtype=dtype)
    encoder = Encoder(cfg, rng)
    weighting = None
    if with_weighting:
        w_cfg = EncoderConfig(vocab_size=vocab.size, num_classes=num_classes, d_h=8,
                              num_layers=1, num_heads=2, d_ff=8, d_p=8,
                              max_len=max_len, dropout=dropout, dtype=dtype)
        weighting = Encoder(w_cfg, rng)
    return Bundle(vocab=vocab, encoder=encoder, weighting=weighting)


def tiny_batch(vocab, max_len=6, seed=0, n=4, num_classes=2):
    rng = np.random.default_rng(seed)
    texts = [" ".join(f"t{rng.integers(8)}" for _ in range(rng.integers(2, 4))) for _ in range(n)]
    ids = vocab.tokenize_batch(texts, max_len)
    labels = np.array([i % num_classes for i in range(n)])
    return ids, labels
