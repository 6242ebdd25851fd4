"""Whitespace tokenizer, vocabulary, and a tiny trainable transformer encoder.

The encoder produces per-token hidden states plus the position-0 pooled
vector, which feeds a softmax classifier and (for the adversarial methods)
a two-layer non-linear projection head.  A second, parameter-disjoint
instance of the same architecture serves as the confidence weighting
network for the label-aware losses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]

CHECKPOINT_VERSION = 1


@dataclass
class Vocabulary:
    """Token <-> dense-id bijection with four reserved special ids."""

    id_to_token: List[str]
    token_to_id: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @classmethod
    def build(cls, texts: Sequence[str], max_size: int = 5000, min_freq: int = 1) -> "Vocabulary":
        """Frequency-capped vocabulary from whitespace-tokenized texts."""
        counts: Dict[str, int] = {}
        for text in texts:
            for tok in text.split():
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = [tok for tok, c in ranked if c >= min_freq][: max_size - len(SPECIAL_TOKENS)]
        return cls(SPECIAL_TOKENS + kept)

    def tokenize(self, text: str, max_len: int = 128) -> np.ndarray:
        """[CLS] + body + [SEP], truncated to max_len and padded with [PAD]."""
        if self.size <= len(SPECIAL_TOKENS):
            raise ValueError("vocabulary is empty (no non-special tokens)")
        if max_len < 3:
            raise ValueError(f"max_len must be >= 3, got {max_len}")
        body = [self.token_to_id.get(tok, UNK) for tok in text.split()]
        body = body[: max_len - 2]
        seq = [CLS] + body + [SEP]
        seq.extend([PAD] * (max_len - len(seq)))
        return np.array(seq, dtype=np.int64)

    def tokenize_batch(self, texts: Sequence[str], max_len: int = 128) -> np.ndarray:
        return np.stack([self.tokenize(t, max_len) for t in texts])


@dataclass
class EncoderConfig:
    vocab_size: int
    num_classes: int
    d_h: int = 64
    num_layers: int = 2
    num_heads: int = 4
    d_ff: int = 0          # 0 -> 2 * d_h
    d_p: int = 64
    max_len: int = 128
    dropout: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 2 * self.d_h
        if self.d_h % self.num_heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by num_heads={self.num_heads}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class EncoderOutput:
    """Token representations for a batch (examples stacked row-wise) plus the
    pooled position-0 vectors."""

    stacked: Tensor        # (sum of effective lengths x d_h)
    offsets: np.ndarray    # example i occupies rows [offsets[i], offsets[i+1])
    h_cls: Tensor          # (batch x d_h); row i == example_hidden(i)[0]

    def example_hidden(self, i: int) -> Tensor:
        return ad.gather_rows(self.stacked, np.arange(self.offsets[i], self.offsets[i + 1]))

    @property
    def hidden(self) -> List[Tensor]:
        return [self.example_hidden(i) for i in range(len(self.offsets) - 1)]


class Encoder:
    """Tiny transformer-style encoder with classifier and projection heads.

    Pads only ever trail [SEP], so attention masking is implemented by
    truncating each example to its effective length; appended pads can
    never influence the pooled vector.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.params: Dict[str, Tensor] = {}
        dt = config.np_dtype

        def uniform(name, rows, cols=None):
            fan_in = rows if cols is None else cols
            bound = 1.0 / math.sqrt(fan_in)
            shape = (rows,) if cols is None else (rows, cols)
            self.params[name] = Tensor(rng.uniform(-bound, bound, shape).astype(dt), requires_grad=True)

        self.params["emb"] = Tensor(
            (rng.normal(0.0, 0.02, (config.vocab_size, config.d_h))).astype(dt), requires_grad=True
        )
        self.params["pos"] = Tensor(
            (rng.normal(0.0, 0.02, (config.max_len, config.d_h))).astype(dt), requires_grad=True
        )
        for layer in range(config.num_layers):
            for mat in ("wq", "wk", "wv", "wo"):
                uniform(f"l{layer}.{mat}", config.d_h, config.d_h)
            uniform(f"l{layer}.w_in", config.d_h, config.d_ff)
            self.params[f"l{layer}.b_in"] = Tensor(np.zeros(config.d_ff, dtype=dt), requires_grad=True)
            uniform(f"l{layer}.w_out", config.d_ff, config.d_h)
            self.params[f"l{layer}.b_out"] = Tensor(np.zeros(config.d_h, dtype=dt), requires_grad=True)
        uniform("cls_w", config.num_classes, config.d_h)
        uniform("proj_w1", config.d_p, config.d_h)
        uniform("proj_w2", config.d_p, config.d_p)

    # -- parameter plumbing ----------------------------------------------

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    @property
    def embedding_matrix(self) -> Tensor:
        return self.params["emb"]

    # -- forward ---------------------------------------------------------

    def _layernorm(self, x: Tensor) -> Tensor:
        mu = ad.tmean(x, axis=1, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tmean(ad.mul(centered, centered), axis=1, keepdims=True)
        eps = np.asarray(1e-5, dtype=x.dtype)
        return ad.div(centered, ad.sqrt(ad.add(var, Tensor(eps))))

    def encode(self, batch_ids: np.ndarray, dropout_on: bool = False,
               rng: Optional[np.random.Generator] = None) -> EncoderOutput:
        """Encode a (batch x seq_len) id matrix.

        The batch is processed as one block-diagonal attention graph: all
        examples' non-pad tokens are stacked and cross-example score entries
        get a large negative bias, which zeroes them exactly after the
        softmax's max-shift.  Deterministic given the rng state; dropout_on
        with keep-prob 1.0 equals dropout_on=False.
        """
        if batch_ids.ndim != 2 or batch_ids.shape[0] == 0:
            raise ValueError(f"encode: expected non-empty (batch, seq) ids, got shape {batch_ids.shape}")
        if batch_ids.max() >= self.config.vocab_size or batch_ids.min() < 0:
            raise ValueError("encode: token id out of vocabulary range")
        keep_prob = 1.0 - self.config.dropout if dropout_on else 1.0
        if keep_prob < 1.0 and rng is None:
            raise ValueError("encode: dropout_on requires an rng")
        cfg = self.config

        lengths = np.count_nonzero(batch_ids != PAD, axis=1)
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        tokens = np.concatenate([row[:n] for row, n in zip(batch_ids, lengths)])
        positions = np.concatenate([np.arange(n) for n in lengths])
        total = int(offsets[-1])
        block_of = np.repeat(np.arange(len(lengths)), lengths)
        bias = np.where(block_of[:, None] == block_of[None, :], 0.0, -1e30).astype(cfg.np_dtype)

        x = ad.add(ad.gather_rows(self.params["emb"], tokens),
                   ad.gather_rows(self.params["pos"], positions))
        if keep_prob < 1.0:
            x = ad.dropout(x, keep_prob, rng)
        dk = cfg.d_h // cfg.num_heads
        scale = np.asarray(1.0 / math.sqrt(dk), dtype=cfg.np_dtype)
        for layer in range(cfg.num_layers):
            q = ad.matmul(x, self.params[f"l{layer}.wq"])
            k = ad.matmul(x, self.params[f"l{layer}.wk"])
            v = ad.matmul(x, self.params[f"l{layer}.wv"])
            heads = []
            for h in range(cfg.num_heads):
                lo, hi = h * dk, (h + 1) * dk
                qh, kh, vh = (ad.slice_cols(t, lo, hi) for t in (q, k, v))
                scores = ad.add(ad.mul(ad.matmul(qh, ad.transpose(kh)), Tensor(scale)), Tensor(bias))
                heads.append(ad.matmul(ad.softmax(scores, axis=1), vh))
            attn = ad.matmul(ad.concat_cols(heads), self.params[f"l{layer}.wo"])
            if keep_prob < 1.0:
                attn = ad.dropout(attn, keep_prob, rng)
            x = self._layernorm(ad.add(x, attn))
            m = ad.relu(ad.add(ad.matmul(x, self.params[f"l{layer}.w_in"]), self.params[f"l{layer}.b_in"]))
            m = ad.add(ad.matmul(m, self.params[f"l{layer}.w_out"]), self.params[f"l{layer}.b_out"])
            if keep_prob < 1.0:
                m = ad.dropout(m, keep_prob, rng)
            x = self._layernorm(ad.add(x, m))
        assert x.shape[0] == total
        h_cls = ad.gather_rows(x, offsets[:-1])
        return EncoderOutput(stacked=x, offsets=offsets, h_cls=h_cls)

    def classify(self, h_cls: Tensor) -> Tensor:
        """Class probabilities softmax(W h) for each row of h_cls."""
        return ad.softmax(ad.matmul(h_cls, ad.transpose(self.params["cls_w"])), axis=1)

    def logits(self, h_cls: Tensor) -> Tensor:
        return ad.matmul(h_cls, ad.transpose(self.params["cls_w"]))

    def project(self, h: Tensor) -> Tensor:
        """Non-linear projection W2 relu(W1 h) per row."""
        return ad.matmul(ad.relu(ad.matmul(h, ad.transpose(self.params["proj_w1"]))),
                         ad.transpose(self.params["proj_w2"]))


def weighting_confidence(net: Encoder, batch_ids: np.ndarray, dropout_on: bool = False,
                         rng: Optional[np.random.Generator] = None) -> Tensor:
    """Softmax confidence rows of the weighting network for a batch."""
    out = net.encode(batch_ids, dropout_on=dropout_on, rng=rng)
    return net.classify(out.h_cls)


# -- checkpointing -------------------------------------------------------


def save_checkpoint(path, vocab: Vocabulary, encoders: Dict[str, Encoder],
                    extra: Optional[dict] = None) -> None:
    """Versioned container with vocabulary, configs, and all parameters."""
    arrays = {}
    meta = {"version": CHECKPOINT_VERSION, "vocab": vocab.id_to_token, "configs": {},
            "extra": extra or {}}
    for prefix, enc in encoders.items():
        meta["configs"][prefix] = asdict(enc.config)
        for name, p in enc.params.items():
            arrays[f"{prefix}/{name}"] = p.values
    np.savez(path, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; round-trip is bit-identical."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        vocab = Vocabulary(meta["vocab"])
        encoders = {}
        for prefix, cfg_dict in meta["configs"].items():
            cfg_dict = dict(cfg_dict)
            cfg_dict["d_ff"] = cfg_dict.get("d_ff", 0)
            cfg = EncoderConfig(**cfg_dict)
            enc = Encoder(cfg, np.random.default_rng(0))
            for name in enc.params:
                enc.params[name] = Tensor(np.array(data[f"{prefix}/{name}"]), requires_grad=True)
            encoders[prefix] = enc
    return vocab, encoders, meta.get("extra", {})
