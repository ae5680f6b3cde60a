"""Synthetic unpaired corpora and their on-disk formats.

Two generators produce the training data: a sign corpus of keypoint
trajectories driven by a latent arousal scalar, and a speech corpus of
prosody contours rendered to toy mel-spectrograms. The two corpora share
a phoneme lexicon but no sample-level correspondence.

On-disk formats:
  * sign corpus   — JSON Lines, one record per clip:
      {"clip_id", "arousal", "text": [ints], "frames": [[[x, y] x 13] x T]}
  * speech corpus — JSON Lines, one record per utterance:
      {"utt_id", "speaker_id", "text", "pitch", "energy", "durations",
       "mel_path"}
  * mel file      — binary: magic "MEL1", two uint32 LE (n_frames, n_bins),
      then n_frames * n_bins float32 LE, row-major by frame.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import CorpusConfig
from .errors import ContractError, CorpusFormatError, DegenerateInputError, StatsError
from .skeleton import (
    ELBOW_L, ELBOW_R, FACE_POINTS, HAND_TIP_L, HAND_TIP_R, SHOULDER_L,
    SHOULDER_R, SKELETON, WRIST_L, WRIST_R,
)

MEL_MAGIC = b"MEL1"

# stream tags for per-item RNG derivation: hash(seed, tag, index)
_SIGN_STREAM = 0
_SPEECH_STREAM = 1

BASE_POSE = np.array([
    [0.00, 0.55],    # nose
    [-0.12, 0.65],   # eyeL
    [0.12, 0.65],    # eyeR
    [-0.09, 0.45],   # mouthL
    [0.09, 0.45],    # mouthR
    [-0.50, 0.00],   # shoulderL
    [0.50, 0.00],    # shoulderR
    [-0.75, -0.45],  # elbowL
    [0.75, -0.45],   # elbowR
    [-0.55, -0.80],  # wristL
    [0.55, -0.80],   # wristR
    [-0.50, -0.92],  # handTipL
    [0.50, -0.92],   # handTipR
])


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ProsodyContours:
    """Per-phoneme pitch, energy, and log-duration.

    Pitch and energy live in [0, 1] (normalized units). Integer durations
    are derived by round-half-up of exp(log_duration), clamped to >= 1.
    """

    pitch: np.ndarray
    energy: np.ndarray
    log_duration: np.ndarray

    def __post_init__(self):
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.log_duration = np.asarray(self.log_duration, dtype=np.float64)
        if not (len(self.pitch) == len(self.energy) == len(self.log_duration)):
            raise ContractError("contour channels must have equal length")

    def __len__(self):
        return len(self.pitch)

    @property
    def durations(self) -> np.ndarray:
        d = np.floor(np.exp(self.log_duration) + 0.5)
        return np.maximum(d, 1.0).astype(np.int64)

    @classmethod
    def from_durations(cls, pitch, energy, durations) -> "ProsodyContours":
        durations = np.asarray(durations, dtype=np.float64)
        if np.any(durations < 1):
            raise ContractError("durations must be >= 1")
        return cls(pitch, energy, np.log(durations))

    def __eq__(self, other):
        if not isinstance(other, ProsodyContours):
            return NotImplemented
        return (np.array_equal(self.pitch, other.pitch)
                and np.array_equal(self.energy, other.energy)
                and np.array_equal(self.log_duration, other.log_duration))


@dataclass(eq=False)
class KeypointSequence:
    """A sign clip: T x 13 x 2 keypoint frames plus metadata.

    ``arousal`` is the synthetic latent that drove generation; it is
    metadata for contrast tests only and never enters training.
    """

    frames: np.ndarray
    clip_id: str
    arousal: float
    text: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (SKELETON.n_joints, 2):
            raise ContractError(
                f"frames must be T x {SKELETON.n_joints} x 2, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError(f"clip {self.clip_id}: non-finite coordinates")
        if not 0.0 <= self.arousal <= 1.0:
            raise ContractError(f"clip {self.clip_id}: arousal outside [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, KeypointSequence):
            return NotImplemented
        return (self.clip_id == other.clip_id
                and self.arousal == other.arousal
                and self.text == other.text
                and np.array_equal(self.frames, other.frames))


@dataclass(eq=False)
class SpeechUtterance:
    """A speech sample: mel plus the true prosody it was rendered from."""

    utt_id: str
    speaker_id: int
    text: list[int]
    true_prosody: ProsodyContours
    mel: np.ndarray

    def __post_init__(self):
        self.mel = np.asarray(self.mel, dtype=np.float32)
        if self.mel.ndim != 2 or self.mel.shape[0] < 1:
            raise ContractError(f"{self.utt_id}: mel must be n_frames x n_bins")
        if self.mel.shape[0] != int(self.true_prosody.durations.sum()):
            raise ContractError(f"{self.utt_id}: mel frames != sum of durations")
        for name, v in (("pitch", self.true_prosody.pitch),
                        ("energy", self.true_prosody.energy)):
            if np.any(v < 0) or np.any(v > 1):
                raise ContractError(f"{self.utt_id}: {name} outside [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, SpeechUtterance):
            return NotImplemented
        return (self.utt_id == other.utt_id
                and self.speaker_id == other.speaker_id
                and self.text == other.text
                and self.true_prosody == other.true_prosody
                and np.array_equal(self.mel, other.mel))


@dataclass(frozen=True)
class SpeakerStats:
    """Pooled mean/std of a speaker's true pitch and energy values."""

    mean_pitch: float
    std_pitch: float
    mean_energy: float
    std_energy: float

    def __post_init__(self):
        if not (self.std_pitch > 0 and self.std_energy > 0):
            raise StatsError("speaker stds must be positive")


# ---------------------------------------------------------------------------
# deterministic lookup tables
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _lexicon(vocab_size: int) -> tuple:
    """16 fixed words of 2-4 phoneme ids; shared by both corpora."""
    rng = np.random.default_rng(7031)
    words = []
    for _ in range(16):
        n = int(rng.integers(2, 5))
        words.append(tuple(int(x) for x in rng.integers(0, vocab_size, n)))
    return tuple(words)


@lru_cache(maxsize=None)
def phoneme_pattern(vocab_size: int) -> np.ndarray:
    """Fixed per-phoneme-id pattern written into the top 4 mel bins."""
    return np.random.default_rng(20240517).random((vocab_size, 4))


@lru_cache(maxsize=None)
def _phoneme_pitch_effect(vocab_size: int) -> np.ndarray:
    return (np.random.default_rng(9172).random(vocab_size) - 0.5) * 0.10


@lru_cache(maxsize=None)
def _phoneme_energy_effect(vocab_size: int) -> np.ndarray:
    return (np.random.default_rng(4455).random(vocab_size) - 0.5) * 0.08


@lru_cache(maxsize=None)
def _phoneme_duration_effect(vocab_size: int) -> np.ndarray:
    return np.random.default_rng(8814).integers(0, 3, vocab_size)


def _sample_sentence(rng: np.random.Generator, cfg: CorpusConfig) -> list[int]:
    words = _lexicon(cfg.vocab_size)
    n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    ids: list[int] = []
    for _ in range(n):
        ids.extend(words[int(rng.integers(0, len(words)))])
    return ids


# ---------------------------------------------------------------------------
# keypoint normalization and filtering
# ---------------------------------------------------------------------------

def normalize_keypoints(raw: np.ndarray) -> np.ndarray:
    """Center each frame on the shoulder midpoint and scale to unit width.

    Translation happens per frame; a single global scale makes the mean
    shoulder width exactly 1. Invariant to global translation and uniform
    scaling of the input.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[1:] != (SKELETON.n_joints, 2):
        raise ContractError(f"expected T x {SKELETON.n_joints} x 2, got {raw.shape}")
    mid = 0.5 * (raw[:, SHOULDER_L] + raw[:, SHOULDER_R])
    out = raw - mid[:, None, :]
    widths = np.linalg.norm(out[:, SHOULDER_L] - out[:, SHOULDER_R], axis=1)
    if np.any(widths < 1e-12):
        frame = int(np.argmax(widths < 1e-12))
        raise DegenerateInputError(f"zero shoulder width at frame {frame}")
    out /= widths.mean()
    if not np.all(np.isfinite(out)):
        raise DegenerateInputError("normalization produced non-finite values")
    return out


def clip_and_filter(clip: KeypointSequence,
                    min_frames: int = 30,
                    max_frames: int = 512,
                    max_text_len: int = 40) -> KeypointSequence | None:
    """Truncate over-long clips; reject too-short clips and over-long text.

    Returns None on rejection (rejection is a value, not an error).
    """
    if clip.n_frames < min_frames:
        return None
    if len(clip.text) > max_text_len:
        return None
    if clip.n_frames > max_frames:
        return replace(clip, frames=clip.frames[:max_frames])
    return clip


# ---------------------------------------------------------------------------
# sign corpus generation
# ---------------------------------------------------------------------------

def _ou_jitter(rng: np.random.Generator, n: int, sigma: float, rho: float = 0.9) -> np.ndarray:
    """Mean-reverting 2-d jitter; velocity scale proportional to sigma."""
    steps = rng.normal(0.0, sigma, size=(n, 2))
    out = np.zeros((n, 2))
    for t in range(1, n):
        out[t] = rho * out[t - 1] + steps[t]
    return out


def _jerk_pulses(rng: np.random.Generator, n: int, count: int, amp: float) -> np.ndarray:
    """Sum of short triangular displacement pulses (go out, come back)."""
    out = np.zeros((n, 2))
    for _ in range(count):
        dur = int(rng.integers(2, 5))
        start = int(rng.integers(0, max(n - dur, 1)))
        angle = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(angle), np.sin(angle)])
        mag = amp * rng.uniform(0.25, 0.45)
        for k in range(dur + 1):
            w = 1.0 - abs(2.0 * k / dur - 1.0)  # 0 -> 1 -> 0 triangle
            if start + k < n:
                out[start + k] += mag * w * direction
    return out


def make_sign_clip(cfg: CorpusConfig, seed: int, index: int,
                   arousal: float | None = None) -> KeypointSequence:
    """Generate one clip from the per-clip RNG stream hash(seed, index).

    Hand trajectory amplitude and face jitter velocity both scale with
    arousal through the factor (0.3 + 0.7 * arousal); high arousal also
    mixes in short ballistic jerks, so the motion-histogram shape (not
    just its scale) varies with arousal.
    """
    rng = np.random.default_rng([seed, _SIGN_STREAM, index])
    drawn = float(rng.uniform(0.0, 1.0))
    a = drawn if arousal is None else float(arousal)
    factor = 0.3 + 0.7 * a

    n = int(rng.integers(cfg.gen_min_frames, cfg.gen_max_frames + 1))
    text = _sample_sentence(rng, cfg)
    t = np.arange(n)

    frames = np.tile(BASE_POSE, (n, 1, 1))

    for wrist, tip, elbow in ((WRIST_L, HAND_TIP_L, ELBOW_L),
                              (WRIST_R, HAND_TIP_R, ELBOW_R)):
        amp = factor * rng.uniform(0.28, 0.36)
        freq = rng.uniform(0.04, 0.06)
        ph = rng.uniform(0.0, 2.0 * np.pi, size=2)
        sway = np.stack([
            amp * np.sin(2.0 * np.pi * freq * t + ph[0]),
            0.6 * amp * np.sin(2.0 * np.pi * 0.7 * freq * t + ph[1]),
        ], axis=1)
        n_jerks = int(round(n * 0.16 * a))
        jerks = _jerk_pulses(rng, n, n_jerks, factor)
        path = sway + jerks
        frames[:, wrist] += path
        frames[:, tip] += path + 0.25 * _ou_jitter(rng, n, 0.01 * factor)
        frames[:, elbow] += 0.4 * path

    head = _ou_jitter(rng, n, 0.012 * factor)
    for j in FACE_POINTS:
        frames[:, j] += head + _ou_jitter(rng, n, 0.004 * factor)

    # global drift, removed exactly by normalization
    drift = np.cumsum(rng.normal(0.0, 0.005, size=(n, 2)), axis=0) + rng.uniform(-1, 1, 2)
    frames += drift[:, None, :]

    return KeypointSequence(
        frames=normalize_keypoints(frames),
        clip_id=f"sign_{index:05d}",
        arousal=a,
        text=text,
    )


def gen_sign_corpus(n_clips: int, seed: int, cfg: CorpusConfig) -> list[KeypointSequence]:
    """Deterministic sign corpus of n_clips filtered keypoint sequences."""
    if n_clips < 1:
        raise ContractError("n_clips must be >= 1")
    cfg.validate()
    out = []
    for i in range(n_clips):
        clip = make_sign_clip(cfg, seed, i)
        kept = clip_and_filter(clip, cfg.min_frames, cfg.max_frames, cfg.max_text_len)
        if kept is not None:
            out.append(kept)
    return out


def gen_probe_clips(n_clips: int, seed: int, cfg: CorpusConfig,
                    index_offset: int = 10000) -> list[KeypointSequence]:
    """Held-out clips from the same generator, on an index range disjoint
    from the training corpus.

    Evaluation protocols that compare synthesized outputs across arousal
    groups use these to size the comparison independently of the corpus;
    rank-sum power then comes from n_clips rather than the corpus size.
    """
    if n_clips < 1:
        raise ContractError("n_clips must be >= 1")
    if index_offset < 0:
        raise ContractError("index_offset must be >= 0")
    cfg.validate()
    out = []
    for i in range(n_clips):
        clip = make_sign_clip(cfg, seed, index_offset + i)
        kept = clip_and_filter(clip, cfg.min_frames, cfg.max_frames, cfg.max_text_len)
        if kept is not None:
            out.append(kept)
    return out


# ---------------------------------------------------------------------------
# speech corpus generation and the analytic renderer
# ---------------------------------------------------------------------------

def render_mel(text: list[int], prosody: ProsodyContours, n_bins: int = 16,
               speaker: SpeakerStats | None = None) -> np.ndarray:
    """Render prosody contours to a toy mel-spectrogram, deterministically.

    Phoneme l occupies d_l identical frames: a Gaussian bump over bins
    centered at round(pitch * (n_bins - 1)) with amplitude energy and
    width 1.5 bins, plus a fixed per-phoneme-id pattern in the top 4 bins
    scaled by 0.2 * energy. ``speaker`` is accepted for interface
    symmetry; identity lives entirely in the contour statistics.
    """
    if len(text) != len(prosody):
        raise ContractError("text and contour lengths differ")
    if np.any(prosody.pitch < 0) or np.any(prosody.pitch > 1):
        raise ContractError("pitch outside [0, 1]")
    if np.any(prosody.energy < 0) or np.any(prosody.energy > 1):
        raise ContractError("energy outside [0, 1]")
    durations = prosody.durations
    bins = np.arange(n_bins, dtype=np.float64)
    pattern = phoneme_pattern(max(max(text) + 1, 2))
    cols = []
    for q, pi, en, d in zip(text, prosody.pitch, prosody.energy, durations):
        center = math.floor(pi * (n_bins - 1) + 0.5)  # round half up
        col = en * np.exp(-((bins - center) ** 2) / (2.0 * 1.5 ** 2))
        col[n_bins - 4:] += 0.2 * en * pattern[q]
        cols.append(np.tile(col, (int(d), 1)))
    return np.concatenate(cols, axis=0).astype(np.float32)


def gen_speech_corpus(n_utts: int, n_speakers: int, seed: int,
                      cfg: CorpusConfig) -> list[SpeechUtterance]:
    """Deterministic speech corpus; speakers carry fixed pitch/energy offsets.

    Each utterance draws a liveliness scalar g in [0, 1] that raises both
    the overall prosody level and the depth of per-phoneme modulation, so
    louder, higher-pitched utterances also swing more within the sentence.
    Speaker identity stays a fixed additive offset on top of that.
    """
    if n_utts < 1:
        raise ContractError("n_utts must be >= 1")
    if n_speakers < 1:
        raise ContractError("n_speakers must be >= 1")
    cfg.validate()
    pe = _phoneme_pitch_effect(cfg.vocab_size)
    ee = _phoneme_energy_effect(cfg.vocab_size)
    de = _phoneme_duration_effect(cfg.vocab_size)
    out = []
    for i in range(n_utts):
        rng = np.random.default_rng([seed, _SPEECH_STREAM, i])
        speaker = i % n_speakers
        base_p = 0.5 if n_speakers == 1 else 0.52 - 0.04 * speaker / (n_speakers - 1)
        base_e = 0.5 if n_speakers == 1 else 0.48 + 0.04 * speaker / (n_speakers - 1)
        text = _sample_sentence(rng, cfg)
        q = np.array(text)
        lively = rng.uniform()
        depth = 0.4 + 1.2 * lively
        shift = 0.12 * (lively - 0.5)
        pitch = np.clip(base_p + shift + depth * (pe[q] + rng.normal(0.0, 0.04, len(q))),
                        0.05, 0.95)
        energy = np.clip(base_e + shift + depth * (ee[q] + rng.normal(0.0, 0.04, len(q))),
                         0.1, 0.9)
        durations = 2 + de[q] + rng.integers(0, 2, len(q))
        prosody = ProsodyContours.from_durations(pitch, energy, durations)
        out.append(SpeechUtterance(
            utt_id=f"utt_{i:05d}",
            speaker_id=speaker,
            text=text,
            true_prosody=prosody,
            mel=render_mel(text, prosody, cfg.mel_bins),
        ))
    return out


def speaker_stats(corpus: list[SpeechUtterance]) -> dict[int, SpeakerStats]:
    """Pooled per-speaker mean/std of true pitch and energy values."""
    groups: dict[int, list[SpeechUtterance]] = {}
    for utt in corpus:
        groups.setdefault(utt.speaker_id, []).append(utt)
    stats = {}
    for sp, utts in sorted(groups.items()):
        pitch = np.concatenate([u.true_prosody.pitch for u in utts])
        energy = np.concatenate([u.true_prosody.energy for u in utts])
        stats[sp] = SpeakerStats(
            mean_pitch=float(pitch.mean()), std_pitch=float(pitch.std()),
            mean_energy=float(energy.mean()), std_energy=float(energy.std()),
        )
    return stats


def split_corpus(items: list, test_fraction: float) -> tuple[list, list]:
    """Deterministic train/test split: the trailing fraction is the test set."""
    n_test = int(round(len(items) * test_fraction))
    if n_test == 0:
        return list(items), []
    return list(items[:-n_test]), list(items[-n_test:])


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def write_mel(mel: np.ndarray, path: str | Path):
    mel = np.asarray(mel, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<II", mel.shape[0], mel.shape[1]))
        f.write(np.ascontiguousarray(mel, dtype="<f4").tobytes())


def read_mel(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MEL_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic, not a mel file")
    if len(data) < 12:
        raise CorpusFormatError(f"{path}: truncated header")
    n_frames, n_bins = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n_frames * n_bins
    if len(data) != expected:
        raise CorpusFormatError(
            f"{path}: expected {expected} bytes for {n_frames}x{n_bins}, got {len(data)}")
    mel = np.frombuffer(data[12:], dtype="<f4").reshape(n_frames, n_bins)
    if not np.all(np.isfinite(mel)):
        raise CorpusFormatError(f"{path}: non-finite mel values")
    return mel.copy()


def write_sign_corpus(clips: list[KeypointSequence], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for clip in clips:
            record = {
                "clip_id": clip.clip_id,
                "arousal": clip.arousal,
                "text": list(clip.text),
                "frames": clip.frames.tolist(),
            }
            f.write(json.dumps(record) + "\n")


def read_sign_corpus(path: str | Path) -> list[KeypointSequence]:
    clips = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                clips.append(KeypointSequence(
                    frames=np.array(rec["frames"], dtype=np.float64),
                    clip_id=rec["clip_id"],
                    arousal=float(rec["arousal"]),
                    text=[int(x) for x in rec["text"]],
                ))
            except (ValueError, KeyError, TypeError) as e:
                raise CorpusFormatError(f"{path}:{lineno}: bad sign record: {e}") from e
    return clips


def write_speech_corpus(corpus: list[SpeechUtterance], path: str | Path):
    path = Path(path)
    mel_dir = path.parent / f"{path.stem}_mels"
    mel_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for utt in corpus:
            mel_rel = f"{path.stem}_mels/{utt.utt_id}.mel"
            write_mel(utt.mel, path.parent / mel_rel)
            record = {
                "utt_id": utt.utt_id,
                "speaker_id": utt.speaker_id,
                "text": list(utt.text),
                "pitch": utt.true_prosody.pitch.tolist(),
                "energy": utt.true_prosody.energy.tolist(),
                "durations": utt.true_prosody.durations.tolist(),
                "mel_path": mel_rel,
            }
            f.write(json.dumps(record) + "\n")


def read_speech_corpus(path: str | Path) -> list[SpeechUtterance]:
    path = Path(path)
    corpus = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                prosody = ProsodyContours.from_durations(
                    rec["pitch"], rec["energy"], rec["durations"])
                corpus.append(SpeechUtterance(
                    utt_id=rec["utt_id"],
                    speaker_id=int(rec["speaker_id"]),
                    text=[int(x) for x in rec["text"]],
                    true_prosody=prosody,
                    mel=read_mel(path.parent / rec["mel_path"]),
                ))
            except (ValueError, KeyError, TypeError, OSError) as e:
                raise CorpusFormatError(f"{path}:{lineno}: bad speech record: {e}") from e
    return corpus
