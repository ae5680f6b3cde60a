"""Adversarial prosody transfer from sign-language motion to a small
frozen text-to-speech stack, with fully synthetic corpora.

The package trains a gated sign-conditioning branch against a frozen
phoneme-to-mel backbone using unpaired sign and speech data, couples the
modalities purely through losses on prosody contours and motion
histograms, and ships a deterministic end-to-end pipeline: corpus
generation, pretraining, adversarial training, synthesis, evaluation,
and gradient verification.
"""

from .config import (BackboneConfig, CorpusConfig, EvalConfig, LossWeights,
                     RunConfig, TrainConfig)
from .errors import (CheckpointMismatchError, ConfigError, ContractError,
                     CorpusFormatError, DegenerateInputError, StatsError,
                     TrainingError)

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "CheckpointMismatchError", "ConfigError",
    "ContractError", "CorpusConfig", "CorpusFormatError",
    "DegenerateInputError", "EvalConfig", "LossWeights", "RunConfig",
    "StatsError", "TrainConfig", "TrainingError", "__version__",
]
