"""Desk-scale supervised contrastive-learning workbench for text
classification: six training objectives (CE, SCL, CAT, TACT, LCL, TLCL) over
a tiny trainable encoder, with data-efficiency, batch-size, and
embedding-geometry experiment drivers."""

from . import autodiff
from .autodiff import Tensor, grad_wrt
from .encoder import Encoder, EncoderConfig, Vocabulary
from .objectives import (ContrastBatch, ObjectiveConfig, combine, cross_entropy,
                         infonce, lcl_loss, ntxent)
from .trainer import (Bundle, RunRecord, TrainConfig, adam_step, batch_size_sweep,
                      data_efficiency_sweep, method_loss, train)
from .workbench.data import DatasetSplits, LabeledCorpus, synth_corpus

__version__ = "0.1.0"

__all__ = [
    "autodiff", "Tensor", "grad_wrt",
    "Encoder", "EncoderConfig", "Vocabulary",
    "ContrastBatch", "ObjectiveConfig", "combine", "cross_entropy",
    "infonce", "lcl_loss", "ntxent",
    "Bundle", "RunRecord", "TrainConfig", "adam_step", "batch_size_sweep",
    "data_efficiency_sweep", "method_loss", "train",
    "DatasetSplits", "LabeledCorpus", "synth_corpus",
]
