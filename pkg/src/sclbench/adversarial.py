"""Positive-view construction: dropout re-encoding and the two FGSM variants
(whole embedding-matrix perturbation, and per-example perturbation of the
pooled token representation)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_wrt
from .encoder import Encoder, EncoderOutput
from .objectives import cross_entropy


@dataclass
class Perturbation:
    target: str        # "embedding_matrix" or "token_representations"
    r: np.ndarray      # same shape as the target
    epsilon: float


def dropout_view(encoder: Encoder, batch_ids: np.ndarray, rng: np.random.Generator) -> EncoderOutput:
    """Re-encode the same token ids with a fresh dropout mask."""
    if encoder.config.dropout == 0.0:
        warnings.warn("dropout_view: encoder dropout is 0, views will be identical")
        return encoder.encode(batch_ids, dropout_on=False)
    return encoder.encode(batch_ids, dropout_on=True, rng=rng)


def normalized_perturbation(grad: np.ndarray, epsilon: float, ascent: bool = False) -> np.ndarray:
    """-eps * g / ||g||_2 over the whole array (sign flipped by ascent);
    zero gradient yields a zero perturbation."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        warnings.warn("FGSM: zero gradient, perturbation is zero")
        return np.zeros_like(grad)
    sign = 1.0 if ascent else -1.0
    return (sign * epsilon / norm) * grad


def fgsm_embedding(
    encoder: Encoder,
    batch_ids: np.ndarray,
    labels: np.ndarray,
    epsilon: float,
    loss: Optional[Tensor] = None,
    ascent: bool = False,
    dropout_on: bool = False,
    rng: Optional[np.random.Generator] = None,
    frozen_r: Optional[np.ndarray] = None,
) -> Tuple[EncoderOutput, Perturbation]:
    """Encode the batch with the embedding matrix shifted by a single global
    perturbation derived from the CE gradient; the matrix is restored
    bitwise afterward.

    ``loss`` is the clean CE loss tensor to differentiate; computed here
    (dropout off) when omitted.  ``frozen_r`` bypasses the gradient step
    with a precomputed perturbation.
    """
    emb = encoder.embedding_matrix
    if frozen_r is not None:
        r = frozen_r
    else:
        if loss is None:
            out = encoder.encode(batch_ids, dropout_on=False)
            loss = cross_entropy(encoder.classify(out.h_cls), labels)
        r = normalized_perturbation(grad_wrt(loss, emb), epsilon, ascent)
    original = emb.values
    emb.values = original + r.astype(original.dtype)
    try:
        perturbed = encoder.encode(batch_ids, dropout_on=dropout_on, rng=rng)
    finally:
        emb.values = original
    return perturbed, Perturbation("embedding_matrix", r, epsilon)


def fgsm_token(
    h_cls: Tensor,
    loss: Tensor,
    epsilon: float,
    ascent: bool = False,
    per_token_grad: Optional[np.ndarray] = None,
    frozen_r: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Perturbation]:
    """Per-example perturbation of the pooled representations: each row of
    h_cls moves by exactly epsilon along its own (negative) CE gradient.

    No parameters are touched; the returned tensor stays in the graph of
    h_cls so training gradients flow through the clean encoder pass.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if frozen_r is not None:
        r = frozen_r
    else:
        grad = per_token_grad if per_token_grad is not None else grad_wrt(loss, h_cls)
        norms = np.linalg.norm(grad, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            warnings.warn("fgsm_token: zero per-example gradient, that row is unperturbed")
        sign = 1.0 if ascent else -1.0
        scale = np.divide(sign * epsilon, norms, out=np.zeros_like(norms), where=norms > 0)
        r = (scale * grad).astype(h_cls.dtype)
    h_j = ad.add(h_cls, Tensor(r))
    return h_j, Perturbation("token_representations", r, epsilon)
