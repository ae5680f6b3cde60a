"""Run configuration: one JSON document drives every pipeline.

The document has four sections (corpus, backbone, train, eval). Every
default is materialized explicitly so a dumped config is self-contained,
and the 64-bit FNV-1a hash of the canonical (sorted-key, no-whitespace)
JSON identifies a configuration in checkpoints and logs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class CorpusConfig:
    """Synthetic corpus generation knobs."""

    n_sign_clips: int = 200
    n_speech_utts: int = 200
    n_speakers: int = 2
    seed: int = 11
    vocab_size: int = 32
    mel_bins: int = 16
    # generated clip length range (before the 30/512 filter)
    gen_min_frames: int = 40
    gen_max_frames: int = 120
    # filter thresholds
    min_frames: int = 30
    max_frames: int = 512
    max_text_len: int = 40
    # sentence length range in lexicon words
    min_words: int = 2
    max_words: int = 5

    def validate(self):
        if self.n_speakers < 1:
            raise ConfigError("n_speakers must be >= 1")
        for name in ("n_sign_clips", "n_speech_utts", "vocab_size", "mel_bins",
                     "gen_min_frames", "gen_max_frames", "max_text_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gen_min_frames > self.gen_max_frames:
            raise ConfigError("gen_min_frames must not exceed gen_max_frames")
        if self.min_frames > self.max_frames:
            raise ConfigError("min_frames must not exceed max_frames")


@dataclass
class BackboneConfig:
    """Frozen synthesis core architecture and pretraining knobs."""

    model_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    var_hidden: int = 64
    pitch_bins: int = 32
    energy_bins: int = 32
    max_duration: int = 64
    pretrain_steps: int = 2000
    pretrain_batch: int = 16
    pretrain_lr: float = 1e-3
    seed: int = 5

    def validate(self):
        if self.model_dim % self.n_heads != 0:
            raise ConfigError("model_dim must be divisible by n_heads")
        if self.pretrain_steps < 0:
            raise ConfigError("pretrain_steps must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "BackboneConfig":
        return _build_dataclass(cls, doc, "backbone")


@dataclass
class LossWeights:
    """Scalar weights for the generator objective, plus the alignment margin."""

    signrec: float = 1.0
    promo: float = 0.1
    weight: float = 0.1
    ir: float = 1.0
    sl: float = 1.0
    margin: float = 0.5

    def validate(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (v >= 0.0) or v != v:
                raise ConfigError(f"loss weight {f.name} must be finite and >= 0")


@dataclass
class TrainConfig:
    """Adversarial training loop configuration."""

    sign_corpus: str = "corpus/sign.jsonl"
    speech_corpus: str = "corpus/speech.jsonl"
    backbone_checkpoint: str = "backbone.ckpt"
    steps: int = 500
    batch_size: int = 10
    gen_lr: float = 1e-3
    disc_lr: float = 2e-4
    weight_decay: float = 0.0
    augment_sign: bool = True
    seed: int = 3
    label_bins: int = 16
    test_fraction: float = 0.4
    checkpoint_interval: int = 250
    crop_frames: int = 64
    disc_channels: int = 16
    visual_channels: int = 16
    temporal_channels: int = 32
    estimator_channels: int = 32
    mixer_heads: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    # ablation toggles
    use_natural: bool = True
    use_signrec: bool = True
    use_promo: bool = True
    # convention switches (see DESIGN notes in README)
    disc_convention: str = "real_high"   # real_high | fake_high
    ir_direction: str = "penalize_above"  # penalize_above | penalize_below
    adapm_channels: str = "all"           # all | pitch_energy

    def validate(self):
        self.weights.validate()
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.label_bins < 2:
            raise ConfigError("label_bins must be >= 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.disc_convention not in ("real_high", "fake_high"):
            raise ConfigError(f"unknown disc_convention {self.disc_convention!r}")
        if self.ir_direction not in ("penalize_above", "penalize_below"):
            raise ConfigError(f"unknown ir_direction {self.ir_direction!r}")
        if self.adapm_channels not in ("all", "pitch_energy"):
            raise ConfigError(f"unknown adapm_channels {self.adapm_channels!r}")


@dataclass
class EvalConfig:
    """Evaluation harness configuration."""

    n_identity_pairs: int = 50
    min_group_size: int = 10
    plot_clips: int = 2
    # held-out clips drawn for the arousal-contrast comparison; index
    # offset keeps them disjoint from every corpus clip
    contrast_clips: int = 600
    contrast_index_offset: int = 10000

    def validate(self):
        if self.n_identity_pairs < 1:
            raise ConfigError("n_identity_pairs must be >= 1")
        if self.contrast_clips < 2:
            raise ConfigError("contrast_clips must be >= 2")
        if self.contrast_index_offset < 0:
            raise ConfigError("contrast_index_offset must be >= 0")


@dataclass
class RunConfig:
    """Top-level configuration: the union of all section configs."""

    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.corpus.validate()
        self.backbone.validate()
        self.train.validate()
        self.eval.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        """Sorted-key, no-whitespace JSON; the hashing input."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """64-bit FNV-1a of the canonical JSON, as a 16-digit hex string."""
        return f"{fnv1a_64(self.canonical_json().encode('utf-8')):016x}"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        cfg = RunConfig(
            corpus=_section(CorpusConfig, doc, "corpus"),
            backbone=_section(BackboneConfig, doc, "backbone"),
            train=_section(TrainConfig, doc, "train"),
            eval=_section(EvalConfig, doc, "eval"),
        )
        unknown = set(doc) - {"corpus", "backbone", "train", "eval"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_dict(doc)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build_dataclass(cls, doc: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        if name == "weights" and isinstance(value, dict):
            value = _build_dataclass(LossWeights, value, f"{where}.weights")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {where} section: {e}") from e


def _section(cls, doc: dict, name: str):
    sub = doc.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return _build_dataclass(cls, sub, name)
