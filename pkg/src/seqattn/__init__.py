"""Attention-based sequence-to-sequence models with multiscale alignment and contextual history.

Built on a small numpy reverse-mode autodiff core; the convolution and
edit-distance kernels use a compiled extension when it is available.
"""
from .attention import VARIANTS, AttentionHistory, FilterBank, history_init, history_step, make_scorer
from .checkpoint import Checkpoint, CheckpointFormatError
from .config import TrainConfig, config_from_dict, load_config
from .decoding import beam_decode, greedy_decode, tts_infer
from .kernels import BACKEND
from .metrics import cer, diagnostics, l2_metric
from .model import ModelConfig, Seq2Seq, mle_loss, tts_loss
from .tasks import SyntheticTaskSpec, generate
from .tensor import ConfigurationError, ContractViolation, DimensionError, Tensor, no_grad
from .train import evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "VARIANTS", "AttentionHistory", "Checkpoint", "CheckpointFormatError", "ConfigurationError",
    "ContractViolation", "DimensionError", "FilterBank", "ModelConfig", "Seq2Seq", "SyntheticTaskSpec",
    "Tensor", "TrainConfig", "beam_decode", "cer", "config_from_dict", "diagnostics", "evaluate", "generate",
    "greedy_decode", "history_init", "history_step", "l2_metric", "load_config", "make_scorer", "mle_loss",
    "no_grad", "train", "tts_infer", "tts_loss",
]
