"""Recursive joint cross-modal attention fusion at desk scale.

A self-contained stack for training and verifying the recursive
audio/visual/text fusion mechanism: a reverse-mode autodiff core over 2-D
float64 tensors, TCN temporal modeling, the fusion block with its CCC loss,
synthetic data generation, and a reproducible training harness + CLI.
"""

from .autodiff import Tensor, backward, grad_check
from .data import SequenceRecord, SyntheticConfig, WindowSpec, generate_synthetic, window
from .fusion import FusionConfig, RjcmaParams, rjcma_forward
from .metrics import ccc, ccc_loss, evaluate
from .model import RjcmaModel
from .temporal import TcnStack, tcn_forward
from .train import TrainConfig, cross_validate, fit

__all__ = [
    "Tensor", "backward", "grad_check",
    "SequenceRecord", "SyntheticConfig", "WindowSpec",
    "generate_synthetic", "window",
    "FusionConfig", "RjcmaParams", "rjcma_forward",
    "ccc", "ccc_loss", "evaluate",
    "RjcmaModel", "TcnStack", "tcn_forward",
    "TrainConfig", "cross_validate", "fit",
]

__version__ = "0.1.0"
