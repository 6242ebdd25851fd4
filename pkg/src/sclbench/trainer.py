"""Training harness: per-method loss assembly, Adam, early stopping on dev
macro-F1 with best-checkpoint test evaluation, and the data-efficiency /
batch-size experiment drivers."""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .adversarial import dropout_view, fgsm_embedding, fgsm_token
from .encoder import Encoder, EncoderConfig, Vocabulary, weighting_confidence
from .objectives import (METHODS, ContrastBatch, ObjectiveConfig,
                         combine, cross_entropy, infonce, lcl_loss, ntxent)

DEFAULT_FRACTIONS = (0.10, 0.25, 0.50, 1.00)
DEFAULT_BATCH_SIZES = (4, 8, 16)


@dataclass
class TrainConfig:
    method: str = "ce"
    batch_size: int = 16
    learning_rate: float = 5e-5
    max_epochs: int = 25
    patience: int = 5
    max_seq_len: int = 128
    lam: float = 0.5
    tau: float = 0.3
    epsilon: float = 0.01
    seed: int = 0
    data_fraction: float = 1.0
    train_cap: int = 50_000
    dev_cap: int = 5_000
    test_cap: int = 5_000
    # encoder knobs (desk-scale defaults)
    d_h: int = 64
    num_layers: int = 2
    num_heads: int = 4
    d_p: int = 64
    dropout: float = 0.1
    weighting_d_h: int = 32
    weighting_num_heads: int = 2
    vocab_max_size: int = 5000
    dtype: str = "float32"
    project_contrast: bool = False
    infonce_both_directions: bool = True
    adversarial_ascent: bool = False
    tlcl_weight_on_adversarial: bool = False
    balanced_batches: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        if self.patience > self.max_epochs:
            raise ValueError("patience must be <= max_epochs")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError(f"data_fraction must be in (0, 1], got {self.data_fraction}")

    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            method=self.method, lam=self.lam, tau=self.tau, epsilon=self.epsilon,
            project_contrast=self.project_contrast,
            infonce_both_directions=self.infonce_both_directions,
            adversarial_ascent=self.adversarial_ascent,
            tlcl_weight_on_adversarial=self.tlcl_weight_on_adversarial,
        )


@dataclass
class RunRecord:
    config: dict
    epochs: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0
    test_f1: float = 0.0
    wall_clock_s: float = 0.0
    diverged: bool = False

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "epoch", **e}) for e in self.epochs]
        summary = {"kind": "summary", "config": self.config, "best_epoch": self.best_epoch,
                   "best_dev_f1": self.best_dev_f1, "test_f1": self.test_f1,
                   "wall_clock_s": self.wall_clock_s, "diverged": self.diverged}
        lines.append(json.dumps(summary))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        epochs, summary = [], None
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.pop("kind") == "epoch":
                epochs.append(rec)
            else:
                summary = rec
        if summary is None:
            raise ValueError("RunRecord stream has no summary line")
        return cls(config=summary["config"], epochs=epochs, best_epoch=summary["best_epoch"],
                   best_dev_f1=summary["best_dev_f1"], test_f1=summary["test_f1"],
                   wall_clock_s=summary["wall_clock_s"], diverged=summary.get("diverged", False))


@dataclass
class Bundle:
    """A trainable model: vocabulary, main encoder, optional weighting net."""

    vocab: Vocabulary
    encoder: Encoder
    weighting: Optional[Encoder] = None

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"enc/{k}": v for k, v in self.encoder.parameters().items()}
        if self.weighting is not None:
            params.update({f"wnet/{k}": v for k, v in self.weighting.parameters().items()})
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()


def build_bundle(vocab: Vocabulary, num_classes: int, cfg: TrainConfig,
                 rng: np.random.Generator) -> Bundle:
    enc_cfg = EncoderConfig(vocab_size=vocab.size, num_classes=num_classes, d_h=cfg.d_h,
                            num_layers=cfg.num_layers, num_heads=cfg.num_heads, d_p=cfg.d_p,
                            max_len=cfg.max_seq_len, dropout=cfg.dropout, dtype=cfg.dtype)
    encoder = Encoder(enc_cfg, rng)
    weighting = None
    if cfg.method in ("lcl", "tlcl"):
        w_cfg = EncoderConfig(vocab_size=vocab.size, num_classes=num_classes,
                              d_h=cfg.weighting_d_h, num_layers=1,
                              num_heads=cfg.weighting_num_heads, d_p=cfg.weighting_d_h,
                              max_len=cfg.max_seq_len, dropout=cfg.dropout, dtype=cfg.dtype)
        weighting = Encoder(w_cfg, rng)
    return Bundle(vocab=vocab, encoder=encoder, weighting=weighting)


# -- per-method loss -----------------------------------------------------


def method_loss(
    bundle: Bundle,
    batch_ids: np.ndarray,
    labels: np.ndarray,
    cfg: ObjectiveConfig,
    rng: Optional[np.random.Generator] = None,
    train_mode: bool = True,
    frozen_r: Optional[np.ndarray] = None,
    frozen_weights: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Dict[str, float]]:
    """Build the combined loss graph for one batch under the given method.

    ``frozen_r`` fixes the FGSM perturbation and ``frozen_weights`` the
    detached per-example confidences (oracle use: the training gradient
    treats both as constants, so finite-difference checks must too).
    """
    enc = bundle.encoder
    n = len(labels)
    dropout_on = train_mode and enc.config.dropout > 0.0
    out = enc.encode(batch_ids, dropout_on=dropout_on, rng=rng)
    probs = enc.classify(out.h_cls)
    ce = cross_entropy(probs, labels)
    parts: Dict[str, float] = {"ce": ce.item()}

    if cfg.method == "ce" or (cfg.method == "scl" and cfg.lam == 0.0):
        # lambda 0 reduces SCL to pure CE; skip the view so no RNG is consumed
        loss = combine("ce", {"ce": ce})
        parts["total"] = loss.item()
        return loss, parts

    def contrast_reps(a: Tensor, b: Tensor) -> Tensor:
        cat = ad.concat_rows([a, b])
        return enc.project(cat) if cfg.project_contrast else cat

    if cfg.method == "scl":
        view = dropout_view(enc, batch_ids, rng)
        reps = contrast_reps(out.h_cls, view.h_cls)
        batch = ContrastBatch(reps, np.concatenate([labels, labels]))
        ntx_sum = ntxent(batch, cfg.tau)
        ntx_mean = ad.mul(ntx_sum, 1.0 / (2 * n))
        loss = combine("scl", {"ce": ce, "contrast": ntx_mean}, cfg.lam)
        parts.update(ntxent_sum=ntx_sum.item(), ntxent_mean=ntx_mean.item())

    elif cfg.method in ("cat", "tact"):
        if cfg.method == "cat":
            perturbed, pert = fgsm_embedding(enc, batch_ids, labels, cfg.epsilon, loss=ce,
                                             ascent=cfg.adversarial_ascent,
                                             dropout_on=dropout_on, rng=rng, frozen_r=frozen_r)
            h_j = perturbed.h_cls
        else:
            h_j, pert = fgsm_token(out.h_cls, ce, cfg.epsilon,
                                   ascent=cfg.adversarial_ascent, frozen_r=frozen_r)
        ce_p = cross_entropy(enc.classify(h_j), labels)
        z = enc.project(ad.concat_rows([out.h_cls, h_j]))
        info = infonce(z, cfg.tau, cfg.infonce_both_directions)
        loss = combine(cfg.method, {"ce": ce, "ce_perturbed": ce_p, "contrast": info}, cfg.lam)
        parts.update(ce_perturbed=ce_p.item(), infonce=info.item(),
                     perturbation_norm=float(np.linalg.norm(pert.r)))

    elif cfg.method in ("lcl", "tlcl"):
        if bundle.weighting is None:
            raise ValueError(f"{cfg.method} requires a weighting network")
        if cfg.method == "lcl":
            view = dropout_view(enc, batch_ids, rng)
            h_j = view.h_cls
        else:
            h_j, pert = fgsm_token(out.h_cls, ce, cfg.epsilon,
                                   ascent=cfg.adversarial_ascent, frozen_r=frozen_r)
            parts["perturbation_norm"] = float(np.linalg.norm(pert.r))
        w_dropout = train_mode and bundle.weighting.config.dropout > 0.0
        w_probs = weighting_confidence(bundle.weighting, batch_ids,
                                       dropout_on=w_dropout, rng=rng)
        ce_w = cross_entropy(w_probs, labels)
        if cfg.method == "tlcl" and cfg.tlcl_weight_on_adversarial:
            w_out = bundle.weighting.encode(batch_ids, dropout_on=w_dropout, rng=rng)
            w_ce = cross_entropy(bundle.weighting.classify(w_out.h_cls), labels)
            w_adv, _ = fgsm_token(w_out.h_cls, w_ce, cfg.epsilon, ascent=cfg.adversarial_ascent)
            w_values = bundle.weighting.classify(w_adv).values
        else:
            w_values = w_probs.values
        if frozen_weights is not None:
            w_values = frozen_weights
        weights = np.concatenate([w_values, w_values], axis=0)  # views share origin weights
        reps = contrast_reps(out.h_cls, h_j)
        batch = ContrastBatch(reps, np.concatenate([labels, labels]))
        lf_sum = lcl_loss(batch, weights, cfg.tau)
        lf_mean = ad.mul(lf_sum, 1.0 / (2 * n))
        loss = combine(cfg.method, {"ce": ce, "ce_weighting": ce_w, "contrast": lf_mean}, cfg.lam)
        parts.update(ce_weighting=ce_w.item(), lcl_sum=lf_sum.item(), lcl_mean=lf_mean.item())

    else:
        raise ValueError(f"unknown method {cfg.method!r}")

    parts["total"] = loss.item()
    return loss, parts


# -- optimizer -----------------------------------------------------------


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: Dict[str, Tensor]) -> "AdamState":
        return cls(m={k: np.zeros_like(p.values) for k, p in params.items()},
                   v={k: np.zeros_like(p.values) for k, p in params.items()})


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for {name}")
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** state.t)
        v_hat = state.v[name] / (1 - beta2 ** state.t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)


# -- evaluation ----------------------------------------------------------


def predict(bundle: Bundle, ids: np.ndarray, chunk: int = 64) -> np.ndarray:
    preds = []
    for lo in range(0, len(ids), chunk):
        out = bundle.encoder.encode(ids[lo: lo + chunk], dropout_on=False)
        probs = bundle.encoder.classify(out.h_cls)
        preds.append(np.argmax(probs.values, axis=1))
    return np.concatenate(preds)


# -- subsampling ---------------------------------------------------------


def stratified_nested_subsample(labels: np.ndarray, fraction: float,
                                rng: np.random.Generator) -> np.ndarray:
    """Class-stratified subset indices; prefixes of fixed per-class
    permutations, so smaller fractions nest inside larger ones."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    # largest-remainder allocation so the total matches round(fraction * N)
    counts = {c: int(np.sum(labels == c)) for c in classes}
    target = int(round(fraction * len(labels)))
    floors = {c: int(math.floor(fraction * n)) for c, n in counts.items()}
    remainders = sorted(classes, key=lambda c: fraction * counts[c] - floors[c], reverse=True)
    short = target - sum(floors.values())
    take = dict(floors)
    for c in remainders[:max(short, 0)]:
        take[c] += 1
    chosen = []
    for c in classes:
        if take[c] == 0:
            raise ValueError(f"data fraction {fraction} leaves class {c} empty")
        idx = np.flatnonzero(labels == c)
        perm = idx[rng.permutation(len(idx))]
        chosen.append(perm[: take[c]])
    return np.sort(np.concatenate(chosen))


def _cap_split(texts: Sequence[str], labels: np.ndarray, cap: int,
               rng: np.random.Generator) -> Tuple[List[str], np.ndarray]:
    if len(texts) <= cap:
        return list(texts), np.asarray(labels)
    keep = np.sort(rng.choice(len(texts), size=cap, replace=False))
    return [texts[i] for i in keep], np.asarray(labels)[keep]


# -- training loop -------------------------------------------------------


def train(config: TrainConfig, dataset) -> RunRecord:
    """Full training run per the fixed protocol: Adam, early stopping on dev
    macro-F1, single test evaluation at the best-dev checkpoint."""
    from .workbench.metrics import macro_f1

    start = time.time()
    splits = {name: getattr(dataset, name) for name in ("train", "dev", "test")}
    for name, corpus in splits.items():
        if len(corpus.texts) == 0:
            raise ValueError(f"empty {name} split")

    rng_data = np.random.default_rng(config.seed)
    rng_init = np.random.default_rng(config.seed + 1)
    rng_drop = np.random.default_rng(config.seed + 2)

    train_texts, train_labels = _cap_split(splits["train"].texts, splits["train"].labels,
                                           config.train_cap, rng_data)
    dev_texts, dev_labels = _cap_split(splits["dev"].texts, splits["dev"].labels,
                                       config.dev_cap, rng_data)
    test_texts, test_labels = _cap_split(splits["test"].texts, splits["test"].labels,
                                         config.test_cap, rng_data)
    if config.data_fraction < 1.0:
        keep = stratified_nested_subsample(np.asarray(train_labels), config.data_fraction, rng_data)
        train_texts = [train_texts[i] for i in keep]
        train_labels = np.asarray(train_labels)[keep]

    num_classes = len(splits["train"].class_names)
    if config.method != "ce" and config.batch_size < 2:
        raise ValueError(f"{config.method} needs batch_size >= 2 so anchors have in-batch company")

    vocab = Vocabulary.build(train_texts, max_size=config.vocab_max_size)
    bundle = build_bundle(vocab, num_classes, config, rng_init)
    obj_cfg = config.objective()
    params = bundle.parameters()
    state = AdamState.init(params)

    train_ids = vocab.tokenize_batch(train_texts, config.max_seq_len)
    dev_ids = vocab.tokenize_batch(dev_texts, config.max_seq_len)
    test_ids = vocab.tokenize_batch(test_texts, config.max_seq_len)
    train_labels = np.asarray(train_labels)

    record = RunRecord(config=asdict(config))
    best_f1, best_epoch, best_params, stale = -1.0, 0, None, 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng_data.permutation(len(train_ids))
        if config.balanced_batches:
            order = _class_balanced_order(train_labels, rng_data)
        epoch_parts: Dict[str, List[float]] = {}
        n_correct = 0
        diverged = False
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo: lo + config.batch_size]
            if config.method != "ce" and len(idx) < 2:
                continue  # a trailing singleton has no in-batch contrast
            loss, parts = method_loss(bundle, train_ids[idx], train_labels[idx],
                                      obj_cfg, rng=rng_drop, train_mode=True)
            if not np.isfinite(parts["total"]):
                warnings.warn(f"loss diverged at epoch {epoch}; aborting training")
                diverged = True
                break
            bundle.zero_grad()
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            adam_step(params, grads, state, config.learning_rate)
            for k, v in parts.items():
                epoch_parts.setdefault(k, []).append(v)
        if diverged:
            record.diverged = True
            break

        train_preds = predict(bundle, train_ids)
        n_correct = int(np.sum(train_preds == train_labels))
        dev_preds = predict(bundle, dev_ids)
        dev_f1 = macro_f1(dev_labels, dev_preds, num_classes).macro_f1
        epoch_rec = {"epoch": epoch,
                     "train_acc": n_correct / len(train_labels),
                     "dev_macro_f1": dev_f1}
        epoch_rec.update({f"loss_{k}": float(np.mean(v)) for k, v in epoch_parts.items()})
        record.epochs.append(epoch_rec)

        if dev_f1 > best_f1:  # ties keep the earlier epoch
            best_f1, best_epoch, stale = dev_f1, epoch, 0
            best_params = {k: p.values.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break

    if best_params is not None:
        for k, p in params.items():
            p.values = best_params[k]
    record.best_epoch = best_epoch
    record.best_dev_f1 = max(best_f1, 0.0)
    test_preds = predict(bundle, test_ids)
    record.test_f1 = macro_f1(test_labels, test_preds, num_classes).macro_f1
    record.wall_clock_s = time.time() - start
    record.bundle = bundle  # transient convenience handle, not serialized
    return record


def _class_balanced_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Interleave classes so each batch window mixes labels."""
    by_class = [rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)]
    order = []
    cursors = [0] * len(by_class)
    remaining = len(labels)
    while remaining:
        for ci, idx in enumerate(by_class):
            if cursors[ci] < len(idx):
                order.append(idx[cursors[ci]])
                cursors[ci] += 1
                remaining -= 1
    return np.array(order)


# -- experiment drivers --------------------------------------------------


def data_efficiency_sweep(config: TrainConfig, dataset,
                          fractions: Sequence[float] = DEFAULT_FRACTIONS,
                          methods: Sequence[str] = METHODS) -> Dict[str, Dict[float, RunRecord]]:
    """One run per (method, fraction); fractions share nested subsamples."""
    fractions = sorted(set(fractions))
    allowed = set(DEFAULT_FRACTIONS)
    if not set(fractions) <= allowed:
        raise ValueError(f"fractions must be a subset of {sorted(allowed)}")
    grid: Dict[str, Dict[float, RunRecord]] = {}
    for method in methods:
        grid[method] = {}
        for fraction in fractions:
            cfg = _replace(config, method=method, data_fraction=fraction)
            grid[method][fraction] = train(cfg, dataset)
    return grid


def batch_size_sweep(config: TrainConfig, dataset,
                     sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
                     methods: Sequence[str] = METHODS) -> Dict[str, Dict[int, RunRecord]]:
    """Identical config except batch size; duplicates deduplicated."""
    sizes = sorted(set(sizes))
    if any(s < 1 for s in sizes):
        raise ValueError("batch sizes must be positive")
    results: Dict[str, Dict[int, RunRecord]] = {}
    for method in methods:
        results[method] = {}
        for size in sizes:
            if size < 2 and method != "ce":
                raise ValueError(
                    f"batch size {size} is rejected for {method}: contrastive losses need "
                    "at least one in-batch companion per anchor")
            cfg = _replace(config, method=method, batch_size=size)
            results[method][size] = train(cfg, dataset)
    return results


def _replace(config: TrainConfig, **kwargs) -> TrainConfig:
    d = asdict(config)
    d.update(kwargs)
    return TrainConfig(**d)
