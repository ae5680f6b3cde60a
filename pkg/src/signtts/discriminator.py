"""Least-squares crop discriminator.

Scores fixed-length mel crops with a 3-layer strided convolutional stack.
Mels shorter than the crop are zero-padded; the validity mask rides along
as an extra input channel so the scorer can tell padding from silence.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .errors import ContractError

CROP_FRAMES = 64


class CropDiscriminator(nn.Module):
    def __init__(self, mel_bins: int, channels: int = 16, crop_frames: int = CROP_FRAMES):
        super().__init__()
        self.crop_frames = crop_frames
        self.conv1 = nn.Conv1d(mel_bins + 1, channels, 4, stride=2, padding=1)
        self.conv2 = nn.Conv1d(channels, 2 * channels, 4, stride=2, padding=1)
        self.conv3 = nn.Conv1d(2 * channels, 2 * channels, 4, stride=2, padding=1)
        self.score = nn.Linear(2 * channels, 1)

    def forward(self, crops: Tensor, crop_mask: Tensor) -> Tensor:
        """[N, crop_frames, bins] crops with boolean masks -> [N] scores."""
        if crops.shape[1] != self.crop_frames:
            raise ContractError(
                f"expected {self.crop_frames}-frame crops, got {crops.shape[1]}")
        x = torch.cat([crops, crop_mask.unsqueeze(-1).to(crops.dtype)], dim=-1)
        x = x.transpose(1, 2)
        x = torch.nn.functional.gelu(self.conv1(x))
        x = torch.nn.functional.gelu(self.conv2(x))
        x = torch.nn.functional.gelu(self.conv3(x))
        return self.score(x.mean(dim=2)).squeeze(-1)


def make_crops(mels: list[Tensor], crop_frames: int,
               rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """One crop per mel at a random offset; short mels are padded and masked."""
    if not mels:
        raise ContractError("no mels to crop")
    bins = mels[0].shape[1]
    crops, masks = [], []
    for mel in mels:
        F = mel.shape[0]
        if F < 1 or mel.shape[1] != bins:
            raise ContractError("inconsistent mel shapes in crop batch")
        mask = torch.zeros(crop_frames, dtype=torch.bool)
        if F >= crop_frames:
            start = int(rng.integers(0, F - crop_frames + 1))
            crop = mel[start:start + crop_frames]
            mask[:] = True
        else:
            crop = torch.cat([mel, mel.new_zeros(crop_frames - F, bins)])
            mask[:F] = True
        crops.append(crop)
        masks.append(mask)
    return torch.stack(crops), torch.stack(masks)


def crop_accuracy(d_real: Tensor, d_fake: Tensor,
                  convention: str = "real_high") -> float:
    """Fraction of crops classified correctly at the 0.5 threshold."""
    if convention == "real_high":
        correct = (d_real > 0.5).sum() + (d_fake < 0.5).sum()
    else:
        correct = (d_real < 0.5).sum() + (d_fake > 0.5).sum()
    return float(correct) / (d_real.numel() + d_fake.numel())
