"""Trainable sign-conditioning modules.

Three parts, bundled as one parameter group for the generator optimizer:

  * VisualBackbone — keypoints to a T' x d feature sequence (T' = ceil(T/4))
    via one graph convolution over the skeleton adjacency plus two strided
    temporal convolution stacks (kernels 3 and 7);
  * ProsodyMixer — two cross-attentions from phoneme latents into sign
    features: one emits a per-position contour residual, the other a
    sigmoid gate w; mixed = (1 - w) * p + w * (p + r), re-squashed per
    channel. Both attention output projections start at zero, so the mixed
    contours equal the phoneme-path contours exactly at initialization;
  * ProsodyEstimator — reconstructs the four binned motion distributions
    from predicted pitch/energy contours (replicate-padded convolutions,
    masked mean pooling, four softmax heads).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .backbone import ProsodyTensors
from .corpus import KeypointSequence
from .errors import ContractError
from .skeleton import SKELETON

N_LABEL_CHANNELS = 4  # hand/face x velocity/acceleration


def collate_sign(clips: list[KeypointSequence], dtype=torch.float32) -> dict[str, Tensor]:
    """Pad keypoint clips to [B, T, J, 2] with a boolean frame mask."""
    if not clips:
        raise ContractError("empty sign batch")
    T = max(c.n_frames for c in clips)
    B = len(clips)
    kps = torch.zeros(B, T, SKELETON.n_joints, 2, dtype=dtype)
    frame_mask = torch.zeros(B, T, dtype=torch.bool)
    for i, c in enumerate(clips):
        kps[i, :c.n_frames] = torch.tensor(c.frames, dtype=dtype)
        frame_mask[i, :c.n_frames] = True
    return {"kps": kps, "frame_mask": frame_mask, "texts": [c.text for c in clips]}


def _ceil_halve_lengths(lengths: Tensor) -> Tensor:
    return (lengths + 1) // 2


class _StridedStack(nn.Module):
    """Two stride-2 convolutions with the same odd kernel; halves twice."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int):
        super().__init__()
        pad = (kernel - 1) // 2
        self.conv1 = nn.Conv1d(in_ch, out_ch, kernel, stride=2, padding=pad)
        self.conv2 = nn.Conv1d(out_ch, out_ch, kernel, stride=2, padding=pad)

    def forward(self, x: Tensor) -> Tensor:
        x = torch.nn.functional.gelu(self.conv1(x))
        return torch.nn.functional.gelu(self.conv2(x))


class VisualBackbone(nn.Module):
    """Keypoint frames to sign features at quarter temporal resolution.

    Each joint enters as coordinates concatenated with its per-frame
    displacement vector and displacement norm, the usual two-stream
    trick from skeleton action recognition. The norm channel matters
    most: displacement vectors of an oscillating gesture cancel under
    pooling, the norm does not, so movement magnitude survives to the
    readout instead of being something the temporal stacks must invent.
    """

    def __init__(self, dim: int, joint_channels: int = 16, temporal_channels: int = 32):
        super().__init__()
        adjacency = torch.tensor(SKELETON.adjacency(normalize=True), dtype=torch.float32)
        self.register_buffer("adjacency", adjacency)
        self.edge_weights = nn.Parameter(torch.zeros_like(adjacency))
        self.joint_proj = nn.Linear(5, joint_channels)
        flat = SKELETON.n_joints * joint_channels
        self.stack_narrow = _StridedStack(flat, temporal_channels, kernel=3)
        self.stack_wide = _StridedStack(flat, temporal_channels, kernel=7)
        self.out_proj = nn.Linear(2 * temporal_channels, dim)

    @staticmethod
    def check_normalized(kps: Tensor, frame_mask: Tensor):
        from .skeleton import SHOULDER_L, SHOULDER_R
        widths = (kps[..., SHOULDER_L, :] - kps[..., SHOULDER_R, :]).norm(dim=-1)
        widths = widths[frame_mask]
        if widths.numel() and ((widths - 1.0).abs() > 0.1).any():
            raise ContractError("keypoints are not shoulder-normalized")

    def forward(self, kps: Tensor, frame_mask: Tensor) -> tuple[Tensor, Tensor]:
        """[B, T, J, 2] -> features [B, T', dim] and their mask."""
        self.check_normalized(kps, frame_mask)
        kps = kps * frame_mask[..., None, None].to(kps.dtype)
        vel = torch.zeros_like(kps)
        both = (frame_mask[:, 1:] & frame_mask[:, :-1])[..., None, None]
        vel[:, 1:] = (kps[:, 1:] - kps[:, :-1]) * both.to(kps.dtype)
        speed = torch.sqrt((vel ** 2).sum(dim=-1, keepdim=True) + 1e-12)
        x = torch.cat([kps, vel, speed], dim=-1)
        mixed = torch.einsum("jk,btkc->btjc", self.adjacency + self.edge_weights, x)
        h = torch.nn.functional.gelu(self.joint_proj(mixed))
        B, T = h.shape[:2]
        flat = h.reshape(B, T, -1).transpose(1, 2)  # [B, J*C, T]
        narrow = self.stack_narrow(flat)
        wide = self.stack_wide(flat)
        feats = self.out_proj(torch.cat([narrow, wide], dim=1).transpose(1, 2))
        lengths = frame_mask.sum(dim=1)
        out_lengths = _ceil_halve_lengths(_ceil_halve_lengths(lengths))
        out_mask = (torch.arange(feats.shape[1], device=feats.device)[None, :]
                    < out_lengths[:, None])
        return feats * out_mask.unsqueeze(-1).to(feats.dtype), out_mask


class _CrossAttention(nn.Module):
    """Multi-head attention, queries from one sequence, keys/values from
    another; the output projection maps straight to ``out_dim`` and is
    zero-initialized so the module starts as a constant-zero function.

    ``align`` > 0 adds a fixed soft-diagonal score bias over normalized
    positions, the Gaussian alignment prior familiar from attention TTS:
    query l prefers context near the same relative time. It reshapes
    only the attention weights, so the zero output init still makes the
    whole module start at zero.
    """

    def __init__(self, dim: int, n_heads: int, out_dim: int, align: float = 0.0):
        super().__init__()
        if dim % n_heads:
            raise ContractError("model dim must divide evenly into heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.align = float(align)
        self.q_proj = nn.Linear(dim, dim)
        self.kv_proj = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, out_dim)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, queries: Tensor, context: Tensor, context_mask: Tensor,
                query_mask: Tensor | None = None) -> Tensor:
        B, L, D = queries.shape
        S = context.shape[1]
        q = self.q_proj(queries).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k, v = self.kv_proj(context).chunk(2, dim=-1)
        k = k.view(B, S, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, S, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        bias = torch.where(context_mask[:, None, None, :], 0.0, -1e9).to(queries.dtype)
        if self.align > 0.0:
            s_len = context_mask.sum(dim=1).clamp(min=1).to(queries.dtype)
            if query_mask is None:
                q_len = torch.full_like(s_len, float(L))
            else:
                q_len = query_mask.sum(dim=1).clamp(min=1).to(queries.dtype)
            q_pos = (torch.arange(L, device=queries.device, dtype=queries.dtype)[None]
                     + 0.5) / q_len[:, None]
            s_pos = (torch.arange(S, device=queries.device, dtype=queries.dtype)[None]
                     + 0.5) / s_len[:, None]
            diag = -self.align * (q_pos[:, :, None] - s_pos[:, None, :]) ** 2
            bias = bias + diag[:, None, :, :]
        attn = torch.softmax(scores + bias, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(B, L, D)
        return self.out(mixed)


@dataclass
class MixerOutput:
    contours: ProsodyTensors
    gate: Tensor    # [B, L], in [0, 1], zero at masked positions
    w_sign: Tensor  # [B], mean gate over unmasked positions


_CHANNEL_ORDER = ("pitch", "energy", "log_duration")


class ProsodyMixer(nn.Module):
    """Gated residual mixing of phoneme-path contours with sign evidence.

    ``channels`` selects which contour channels the gate and residual act
    on: "all" or "pitch_energy" (log-duration passes through unchanged).
    The residual attention carries a soft-diagonal alignment prior so each
    phoneme reads the sign segment near its own relative position, which
    lets the residual track the clip's motion profile over time; the gate
    attention stays global, one confidence per position from the whole clip.
    """

    def __init__(self, dim: int, n_heads: int, channels: str = "all"):
        super().__init__()
        if channels not in ("all", "pitch_energy"):
            raise ContractError(f"unknown channel set {channels!r}")
        self.mixed_channels = (_CHANNEL_ORDER if channels == "all"
                               else _CHANNEL_ORDER[:2])
        self.residual_attn = _CrossAttention(dim, n_heads, len(self.mixed_channels),
                                             align=160.0)
        self.gate_attn = _CrossAttention(dim, n_heads, 1)

    @staticmethod
    def _squash(name: str, value: Tensor) -> Tensor:
        if name in ("pitch", "energy"):
            return value.clamp(0.0, 1.0)
        return value  # log-duration is unbounded

    def forward(self, latents: Tensor, contours: ProsodyTensors,
                sign_feats: Tensor, mask: Tensor, sign_mask: Tensor,
                gate_override: float | None = None,
                residual_override: Tensor | None = None) -> MixerOutput:
        maskf = mask.to(latents.dtype)
        residual = self.residual_attn(latents, sign_feats, sign_mask, query_mask=mask)
        if residual_override is not None:
            residual = residual_override
        if gate_override is None:
            gate = torch.sigmoid(self.gate_attn(latents, sign_feats, sign_mask).squeeze(-1))
        else:
            gate = torch.full_like(contours.pitch, float(gate_override))
        gate = gate * maskf
        w_sign = gate.sum(dim=1) / maskf.sum(dim=1)

        out = {name: getattr(contours, name) for name in _CHANNEL_ORDER}
        for c, name in enumerate(self.mixed_channels):
            p = out[name]
            mixed = (1.0 - gate) * p + gate * (p + residual[..., c])
            out[name] = self._squash(name, mixed) * maskf
        return MixerOutput(contours=ProsodyTensors(**out), gate=gate, w_sign=w_sign)


class ProsodyEstimator(nn.Module):
    """Predicted contours to four binned motion distributions.

    Replicate-padded convolutions and mean pooling make the output exactly
    invariant to length for constant inputs. Samples are processed one at
    a time at their true lengths, so batch padding never leaks in.
    """

    def __init__(self, n_bins: int, channels: int = 32):
        super().__init__()
        self.n_bins = n_bins
        self.conv1 = nn.Conv1d(2, channels, 3, padding=1, padding_mode="replicate")
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1, padding_mode="replicate")
        self.heads = nn.ModuleList(nn.Linear(channels, n_bins)
                                   for _ in range(N_LABEL_CHANNELS))

    def forward_single(self, pitch: Tensor, energy: Tensor) -> Tensor:
        """Length-L contour pair -> [4, n_bins] probability rows."""
        if pitch.shape != energy.shape or pitch.ndim != 1 or pitch.shape[0] < 1:
            raise ContractError("estimator needs two equal-length 1-d contours")
        x = torch.stack([pitch, energy])[None]  # [1, 2, L]
        x = torch.nn.functional.gelu(self.conv1(x))
        x = torch.nn.functional.gelu(self.conv2(x))
        pooled = x.mean(dim=2).squeeze(0)
        return torch.stack([torch.softmax(head(pooled), dim=-1) for head in self.heads])

    def forward(self, pitch: Tensor, energy: Tensor, mask: Tensor) -> Tensor:
        """Batched contours [B, L] -> [B, 4, n_bins]."""
        rows = []
        for i in range(pitch.shape[0]):
            n = int(mask[i].sum().item())
            if n < 1:
                raise ContractError("estimator got an all-masked sample")
            rows.append(self.forward_single(pitch[i, :n], energy[i, :n]))
        return torch.stack(rows)


class SignBranch(nn.Module):
    """Everything the generator optimizer trains, as one module."""

    def __init__(self, dim: int, n_heads: int, n_bins: int,
                 visual_channels: int = 16, temporal_channels: int = 32,
                 estimator_channels: int = 32, mixer_channels: str = "all"):
        super().__init__()
        self.visual = VisualBackbone(dim, visual_channels, temporal_channels)
        self.mixer = ProsodyMixer(dim, n_heads, mixer_channels)
        self.estimator = ProsodyEstimator(n_bins, estimator_channels)
