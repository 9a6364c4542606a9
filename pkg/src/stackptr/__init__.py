"""stackptr: a cross-domain stack-pointer dependency parser.

Self-attentive token encoding over word/char-CNN/POS features, a BiLSTM
encoder, a pointer-style top-down decoder with biaffine arc and label
scoring, and checkpoint surgery for transferring a trained network to new
text domains. Everything runs on a small built-in float64 autodiff kernel.
"""

from .autodiff import AdamState, ParameterStore, Rng, Tensor, adam_step, grad_check
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .metrics import EvalReport, attachment_scores, average_domains
from .model import Parser
from .trainer import compute_loss, train
from .transfer import SurgeryPlan, finetune, transplant
from .treebank import (
    DependencyTree,
    Sentence,
    Token,
    Vocabulary,
    build_vocabulary,
    load_pretrained_embeddings,
    parse_conll,
    write_conll,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ParameterStore", "Rng", "Tensor", "adam_step", "grad_check",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "TrainConfig",
    "EvalReport", "attachment_scores", "average_domains",
    "Parser",
    "compute_loss", "train",
    "SurgeryPlan", "finetune", "transplant",
    "DependencyTree", "Sentence", "Token", "Vocabulary", "build_vocabulary",
    "load_pretrained_embeddings", "parse_conll", "write_conll",
    "__version__",
]
