"""Loss functions: cross-entropy, NTXent, InfoNCE, weighted NTXent, and the
per-method final combinations.

NTXent and its label-weighted variant share one kernel in which the weight
term enters only as the difference ``log w[i, y_k] - log w[i, y_j]``.  With
uniform (or any constant) weights that difference is exactly 0.0, so the
weighted loss reduces to the unweighted one bitwise, not just approximately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

METHODS = ("ce", "scl", "cat", "tact", "lcl", "tlcl")
ADVERSARIAL_METHODS = ("cat", "tact", "tlcl")

DEFAULT_LAMBDA = 0.5   # mixing weight between CE and contrastive terms
DEFAULT_TAU = 0.3      # similarity temperature
DEFAULT_EPSILON = 0.01 # FGSM radius (unreported upstream; recorded per run)

PROB_FLOOR = 1e-12


@dataclass
class ObjectiveConfig:
    """Method selector plus the (lambda, tau, epsilon) knobs."""

    method: str = "ce"
    lam: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU
    epsilon: float = DEFAULT_EPSILON
    # contrast on the projection head only for cat/tact by default; flag to
    # enable it for the other contrastive methods as well
    project_contrast: bool = False
    # InfoNCE anchors both (i, j) directions by default; False keeps only i->j
    infonce_both_directions: bool = True
    # FGSM as printed uses a leading minus; True flips to the ascent reading
    adversarial_ascent: bool = False
    # tlcl weighting-net input: clean batch by default, adversarial if True
    tlcl_weight_on_adversarial: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.method in ADVERSARIAL_METHODS and self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0 for {self.method}, got {self.epsilon}")


@dataclass
class ContrastBatch:
    """2N representations: N originals followed by their N augmented views."""

    representations: Tensor  # (2N, d)
    labels: np.ndarray       # (2N,), views inherit the label of their origin

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        n2 = self.representations.shape[0]
        if n2 % 2 != 0 or n2 != len(self.labels):
            raise ValueError(f"ContrastBatch: need an even row count matching labels, "
                             f"got {n2} rows / {len(self.labels)} labels")
        n = n2 // 2
        if not np.array_equal(self.labels[:n], self.labels[n:]):
            raise ValueError("ContrastBatch: view labels must equal origin labels")

    @classmethod
    def from_views(cls, originals: Tensor, views: Tensor, labels) -> "ContrastBatch":
        labels = np.asarray(labels)
        return cls(ad.concat_rows([originals, views]), np.concatenate([labels, labels]))


def positives(labels: np.ndarray) -> List[np.ndarray]:
    """P_i = indices k != i with the same label as i."""
    labels = np.asarray(labels)
    return [np.flatnonzero((labels == labels[i]) & (np.arange(len(labels)) != i))
            for i in range(len(labels))]


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean over the batch of -log p(true class); probabilities floored
    at 1e-12 so a zero never produces NaN."""
    labels = np.asarray(labels)
    n, d_c = probs.shape
    if len(labels) != n:
        raise ValueError(f"cross_entropy: {n} prob rows vs {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= d_c:
        raise ValueError("cross_entropy: label out of range")
    picked = ad.take(probs, np.arange(n), labels)
    return ad.neg(ad.tmean(ad.log(ad.clamp_min(picked, PROB_FLOOR))))


def _weighted_ntxent(reps: Tensor, labels: np.ndarray, tau: float,
                     log_w: Optional[np.ndarray]) -> Tensor:
    """Shared NTXent kernel; sum over anchors (the canonical aggregation).

    log_w is the (2N x 2N) constant matrix log w[i, y_k], or None for the
    unweighted loss (treated as an exact zero matrix).
    """
    n2 = reps.shape[0]
    if n2 < 2:
        raise ValueError("ntxent: need at least 2 rows")
    if tau <= 0:
        raise ValueError(f"ntxent: tau must be > 0, got {tau}")
    dtype = reps.dtype
    sim = ad.cosine_similarity_matrix(reps)
    d = ad.mul(sim, Tensor(np.asarray(1.0 / tau, dtype=dtype)))
    d_vals = d.values
    pos_sets = positives(labels)
    if log_w is None:
        log_w = np.zeros((n2, n2), dtype=dtype)
    terms = []
    eye_mask = np.full(n2, 0.0, dtype=dtype)
    for i, p_i in enumerate(pos_sets):
        if len(p_i) == 0:
            continue  # -1/|P_i| undefined; sole-member anchors contribute 0
        row = ad.gather_rows(d, np.array([i]))  # (1, 2N)
        mask = eye_mask.copy()
        mask[i] = -np.inf
        m_i = np.max(np.delete(d_vals[i], i))  # detached shift, exact for k != i
        anchor_terms = []
        for j in p_i:
            # exponent: (d_ik - m_i) + (log_w[i,k] - log_w[i,j]); the weight
            # difference is exactly zero when weights are constant
            arg = ad.add(ad.add(row, Tensor((mask - m_i).reshape(1, n2))),
                         Tensor((log_w[i] - log_w[i, j]).reshape(1, n2)))
            lse = ad.log(ad.tsum(ad.exp(arg)))
            anchor_terms.append(ad.add(lse, ad.sub(Tensor(np.asarray(m_i, dtype=dtype)),
                                                   ad.take(d, np.array([i]), np.array([j])))))
        acc = anchor_terms[0]
        for t in anchor_terms[1:]:
            acc = ad.add(acc, t)
        terms.append(ad.mul(acc, Tensor(np.asarray(1.0 / len(p_i), dtype=dtype))))
    if not terms:
        return Tensor(np.asarray(0.0, dtype=dtype))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.reshape(total, ())


def ntxent(batch: ContrastBatch, tau: float) -> Tensor:
    """Supervised NTXent over all in-batch anchors, summed (not averaged)."""
    return _weighted_ntxent(batch.representations, batch.labels, tau, None)


def lcl_loss(batch: ContrastBatch, weights: np.ndarray, tau: float) -> Tensor:
    """Label-aware weighted NTXent; weights are softmax confidence rows."""
    weights = np.asarray(weights)
    n2 = batch.representations.shape[0]
    if weights.shape[0] != n2:
        raise ValueError(f"lcl_loss: {weights.shape[0]} weight rows vs {n2} representations")
    if np.any(weights <= 0):
        raise ValueError("lcl_loss: weights must be strictly positive")
    log_w = np.log(weights.astype(batch.representations.dtype))[:, batch.labels]
    return _weighted_ntxent(batch.representations, batch.labels, tau, log_w)


def infonce(z_pairs: Tensor, tau: float, both_directions: bool = True) -> Tensor:
    """InfoNCE with rows i and i+N as positive pairs; mean over anchors."""
    n2 = z_pairs.shape[0]
    if n2 < 2 or n2 % 2 != 0:
        raise ValueError(f"infonce: need an even row count >= 2, got {n2}")
    if tau <= 0:
        raise ValueError(f"infonce: tau must be > 0, got {tau}")
    n = n2 // 2
    dtype = z_pairs.dtype
    d = ad.mul(ad.cosine_similarity_matrix(z_pairs), Tensor(np.asarray(1.0 / tau, dtype=dtype)))
    anchors = range(n2) if both_directions else range(n)
    terms = []
    for i in anchors:
        j = i + n if i < n else i - n
        row = ad.gather_rows(d, np.array([i]))
        mask = np.zeros(n2, dtype=dtype)
        mask[i] = -np.inf
        m_i = np.max(np.delete(d.values[i], i))
        lse = ad.log(ad.tsum(ad.exp(ad.add(row, Tensor((mask - m_i).reshape(1, n2))))))
        terms.append(ad.add(lse, ad.sub(Tensor(np.asarray(m_i, dtype=dtype)),
                                        ad.take(d, np.array([i]), np.array([j])))))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.reshape(ad.mul(total, Tensor(np.asarray(1.0 / len(terms), dtype=dtype))), ())


def combine(method: str, losses: Dict[str, Tensor], lam: float = DEFAULT_LAMBDA) -> Tensor:
    """Final per-method objective as a weighted sum of its constituents.

    Required keys: ce (all); contrast (scl/cat/tact/lcl/tlcl); ce_perturbed
    (cat/tact); ce_weighting (lcl/tlcl).
    """
    def need(key):
        if key not in losses:
            raise ValueError(f"combine({method}): missing constituent loss {key!r}")
        return losses[key]

    if method == "ce":
        return need("ce")
    if method == "scl":
        return ad.add(ad.mul(need("ce"), 1.0 - lam), ad.mul(need("contrast"), lam))
    if method in ("cat", "tact"):
        clean_and_perturbed = ad.add(need("ce"), need("ce_perturbed"))
        return ad.add(ad.mul(clean_and_perturbed, (1.0 - lam) / 2.0),
                      ad.mul(need("contrast"), lam))
    if method in ("lcl", "tlcl"):
        both_ce = ad.add(need("ce"), need("ce_weighting"))
        return ad.add(ad.mul(both_ce, 1.0 - lam), ad.mul(need("contrast"), lam))
    raise ValueError(f"unknown method {method!r}")
