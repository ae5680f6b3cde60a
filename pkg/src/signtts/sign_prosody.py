"""Motion-derived prosody targets for sign clips.

From keypoint frames we take, per tracked part (hands, face):

  * velocity profile   V_t = sum over part joints of |p_{t+1} - p_t|^2,
    one value per frame transition (length T - 1);
  * acceleration profile A_t, the same form applied to velocity vectors
    (length T - 2).

Each profile is normalized by its per-clip maximum into [0, 1] and
discretized into S equal-width bins; bin index floor(m * S) with the
value 1.0 folded into the top bin. Probabilities divide raw counts by the
clip frame count T (not by the number of entries), so the velocity
histogram sums to (T - 1) / T and the acceleration histogram to
(T - 2) / T exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import KeypointSequence
from .errors import ContractError, CorpusFormatError, DegenerateInputError
from .skeleton import FACE_POINTS, HAND_POINTS

CHANNELS = ("hand_vel", "hand_acc", "face_vel", "face_acc")

_EPS = 1e-8


@dataclass(eq=False)
class SignProsodyLabel:
    """Four binned motion distributions for one clip."""

    clip_id: str
    n_bins: int
    probs: dict[str, np.ndarray]

    def __post_init__(self):
        if set(self.probs) != set(CHANNELS):
            raise ContractError(f"label channels must be {CHANNELS}")
        for name in CHANNELS:
            p = np.asarray(self.probs[name], dtype=np.float64)
            if p.shape != (self.n_bins,):
                raise ContractError(
                    f"{self.clip_id}/{name}: expected {self.n_bins} bins, got {p.shape}")
            if np.any(p < 0) or p.sum() > 1.0 + 1e-9:
                raise ContractError(f"{self.clip_id}/{name}: not a sub-distribution")
            self.probs[name] = p

    def __eq__(self, other):
        if not isinstance(other, SignProsodyLabel):
            return NotImplemented
        return (self.clip_id == other.clip_id and self.n_bins == other.n_bins
                and all(np.array_equal(self.probs[c], other.probs[c]) for c in CHANNELS))

    def stacked(self) -> np.ndarray:
        """Channels stacked in canonical order, shape 4 x n_bins."""
        return np.stack([self.probs[c] for c in CHANNELS])


def velocity_profile(frames: np.ndarray, joints: tuple[int, ...]) -> np.ndarray:
    """Summed squared displacement of the given joints per frame step."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise DegenerateInputError("need at least 2 frames for a velocity profile")
    diffs = frames[1:, joints, :] - frames[:-1, joints, :]
    return (diffs ** 2).sum(axis=(1, 2))


def acceleration_profile(frames: np.ndarray, joints: tuple[int, ...]) -> np.ndarray:
    """Summed squared change of joint velocity vectors per frame step."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 3:
        raise DegenerateInputError("need at least 3 frames for an acceleration profile")
    vel = frames[1:, joints, :] - frames[:-1, joints, :]
    diffs = vel[1:] - vel[:-1]
    return (diffs ** 2).sum(axis=(1, 2))


def normalize_profile(values: np.ndarray, eps: float = _EPS) -> np.ndarray:
    """Scale by the per-clip maximum into [0, 1]; all-zero stays all-zero."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise ContractError("profiles are sums of squares; negatives are invalid")
    peak = values.max() if values.size else 0.0
    if peak < eps:
        return np.zeros_like(values)
    return values / peak


def profile_histogram(normalized: np.ndarray, n_bins: int,
                      n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin a normalized profile; probabilities divide counts by n_frames.

    Bin index is floor(m * n_bins) clamped to the top bin, so a boundary
    value s_k lands in bin k and m = 1.0 lands in bin n_bins - 1.
    """
    normalized = np.asarray(normalized, dtype=np.float64)
    if n_bins < 1:
        raise ContractError("n_bins must be >= 1")
    if n_frames < 1:
        raise ContractError("n_frames must be >= 1")
    if normalized.size and (normalized.min() < 0 or normalized.max() > 1):
        raise ContractError("normalized profile must lie in [0, 1]")
    idx = np.minimum(np.floor(normalized * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return counts, counts / float(n_frames)


def mean_speeds(frames: np.ndarray) -> dict[str, float]:
    """Raw (un-normalized) mean velocity per part; carries overall motion scale."""
    return {
        "hand_vel": float(velocity_profile(frames, HAND_POINTS).mean()),
        "face_vel": float(velocity_profile(frames, FACE_POINTS).mean()),
    }


def clip_labels(clip: KeypointSequence, n_bins: int) -> SignProsodyLabel:
    """Compute all four binned motion distributions for one clip."""
    if clip.n_frames < 3:
        raise DegenerateInputError(f"{clip.clip_id}: too short for motion labels")
    probs = {}
    for part, joints in (("hand", HAND_POINTS), ("face", FACE_POINTS)):
        for kind, fn in (("vel", velocity_profile), ("acc", acceleration_profile)):
            profile = normalize_profile(fn(clip.frames, joints))
            _, p = profile_histogram(profile, n_bins, clip.n_frames)
            probs[f"{part}_{kind}"] = p
    return SignProsodyLabel(clip_id=clip.clip_id, n_bins=n_bins, probs=probs)


def corpus_labels(clips: list[KeypointSequence], n_bins: int) -> list[SignProsodyLabel]:
    return [clip_labels(c, n_bins) for c in clips]


def write_labels(labels: list[SignProsodyLabel], path: str | Path):
    """JSON Lines: {"clip_id", "S", "P": {channel: [floats]}} per label."""
    with open(path, "w") as f:
        for lab in labels:
            record = {
                "clip_id": lab.clip_id,
                "S": lab.n_bins,
                "P": {c: lab.probs[c].tolist() for c in CHANNELS},
            }
            f.write(json.dumps(record) + "\n")


def read_labels(path: str | Path) -> list[SignProsodyLabel]:
    labels = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                labels.append(SignProsodyLabel(
                    clip_id=rec["clip_id"],
                    n_bins=int(rec["S"]),
                    probs={c: np.array(rec["P"][c], dtype=np.float64) for c in CHANNELS},
                ))
            except (ValueError, KeyError, TypeError) as e:
                raise CorpusFormatError(f"{path}:{lineno}: bad label record: {e}") from e
    return labels
