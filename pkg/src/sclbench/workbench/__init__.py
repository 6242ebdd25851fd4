from .data import DatasetSplits, IngestResult, LabeledCorpus, export_tsv, ingest, synth_corpus
from .metrics import MetricsReport, macro_f1
from .projection import project_2d

__all__ = [
    "DatasetSplits", "IngestResult", "LabeledCorpus", "export_tsv", "ingest",
    "synth_corpus", "MetricsReport", "macro_f1", "project_2d",
]
