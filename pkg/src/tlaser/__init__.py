"""Translation-trained sentence embeddings on a small numpy autodiff engine."""

from .bpe import Vocabulary, learn_bpe
from .losses import LossBreakdown, LossConfig, total_loss
from .model import ModelConfig, TLaser
from .train import TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = ["LossBreakdown", "LossConfig", "ModelConfig", "TLaser", "TrainConfig", "Vocabulary",
           "learn_bpe", "load_checkpoint", "total_loss", "train"]
