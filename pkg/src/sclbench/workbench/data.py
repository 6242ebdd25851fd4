"""Corpus ingestion (tab-separated ``label<TAB>text``), export, and the
synthetic corpus generator used as the default test substrate."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

HEADER_LINE = "label\ttext"


@dataclass
class LabeledCorpus:
    texts: List[str]
    labels: np.ndarray          # dense class ids
    class_names: List[str]      # id -> name, ordered by first appearance
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.texts) != len(self.labels):
            raise ValueError("texts and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label id outside the class catalog")

    def __len__(self):
        return len(self.texts)


@dataclass
class DatasetSplits:
    train: LabeledCorpus
    dev: LabeledCorpus
    test: LabeledCorpus


@dataclass
class MalformedLine:
    number: int      # 1-based line number
    content: str
    reason: str


@dataclass
class IngestResult:
    corpus: LabeledCorpus
    malformed: List[MalformedLine] = field(default_factory=list)


def ingest(path, split: str = "train",
           class_names: Optional[Sequence[str]] = None) -> IngestResult:
    """Read a UTF-8 TSV corpus; ``#`` lines are comments, malformed lines are
    reported (with line numbers), never silently dropped.

    Pass ``class_names`` to pin the catalog (e.g. dev/test reuse train's);
    otherwise ids are assigned by first appearance.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    catalog: List[str] = list(class_names) if class_names else []
    frozen = class_names is not None
    texts: List[str] = []
    labels: List[int] = []
    malformed: List[MalformedLine] = []
    seen_header = False
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line == HEADER_LINE:
            if seen_header or texts:
                malformed.append(MalformedLine(number, line, "duplicate header"))
            seen_header = True
            continue
        if "\t" not in line:
            malformed.append(MalformedLine(number, line, "missing tab separator"))
            continue
        label, body = line.split("\t", 1)
        label, body = label.strip(), body.strip()
        if not label:
            malformed.append(MalformedLine(number, line, "empty label"))
            continue
        if not body:
            malformed.append(MalformedLine(number, line, "empty text"))
            continue
        if label not in catalog:
            if frozen:
                malformed.append(MalformedLine(number, line, f"unknown class {label!r}"))
                continue
            catalog.append(label)
        texts.append(body)
        labels.append(catalog.index(label))
    if not texts:
        raise ValueError(f"{path}: no valid examples")
    corpus = LabeledCorpus(texts=texts, labels=np.array(labels), class_names=catalog, split=split)
    return IngestResult(corpus=corpus, malformed=malformed)


def export_tsv(corpus: LabeledCorpus, path) -> None:
    lines = [f"{corpus.class_names[y]}\t{t}" for t, y in zip(corpus.texts, corpus.labels)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_splits(directory) -> DatasetSplits:
    """Read train.tsv / dev.tsv / test.tsv with a shared class catalog."""
    directory = Path(directory)
    train = ingest(directory / "train.tsv", split="train").corpus
    dev = ingest(directory / "dev.tsv", split="dev", class_names=train.class_names).corpus
    test = ingest(directory / "test.tsv", split="test", class_names=train.class_names).corpus
    return DatasetSplits(train=train, dev=dev, test=test)


# -- synthetic corpus ----------------------------------------------------

SHARED_POOL = 40
CLASS_POOL = 25


def synth_corpus(classes: int, size: int, seed: int, difficulty: float) -> DatasetSplits:
    """Class-conditional token soup with controllable vocabulary overlap.

    Each token is drawn from a shared pool with probability ``difficulty``,
    otherwise from the class's private pool: difficulty 0 gives disjoint
    vocabularies (trivially separable), difficulty 1 identical distributions
    (chance-level).  Splits are stratified 80/10/10.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty must be in [0, 1], got {difficulty}")
    per_class = size // classes
    if per_class < 10:
        raise ValueError(f"size {size} too small to stratify {classes} classes 80/10/10")
    rng = np.random.default_rng(seed)
    class_names = [f"class{c}" for c in range(classes)]
    shared = [f"w{t:03d}" for t in range(SHARED_POOL)]
    private = {c: [f"c{c}t{t:02d}" for t in range(CLASS_POOL)] for c in range(classes)}

    split_texts = {"train": [], "dev": [], "test": []}
    split_labels = {"train": [], "dev": [], "test": []}
    counts = [per_class + (1 if c < size % classes else 0) for c in range(classes)]
    for c, n_c in enumerate(counts):
        n_dev = max(1, int(round(0.1 * n_c)))
        n_test = max(1, int(round(0.1 * n_c)))
        n_train = n_c - n_dev - n_test
        if n_train < 1:
            raise ValueError(f"class {c} has too few examples for an 80/10/10 split")
        for split, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
            for _ in range(count):
                length = int(rng.integers(5, 13))
                toks = []
                for _ in range(length):
                    if rng.random() < difficulty:
                        toks.append(shared[rng.integers(SHARED_POOL)])
                    else:
                        toks.append(private[c][rng.integers(CLASS_POOL)])
                split_texts[split].append(" ".join(toks))
                split_labels[split].append(c)

    def shuffle(split):
        order = rng.permutation(len(split_texts[split]))
        texts = [split_texts[split][i] for i in order]
        labels = np.array(split_labels[split])[order]
        return LabeledCorpus(texts=texts, labels=labels, class_names=class_names, split=split)

    return DatasetSplits(train=shuffle("train"), dev=shuffle("dev"), test=shuffle("test"))
