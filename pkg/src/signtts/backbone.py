"""Frozen acoustic core: phoneme encoder, variance predictors, length
regulation with quantized pitch/energy embeddings, and the mel decoder.

The module is pretrained supervised on the speech corpus (teacher-forced
durations and pitch/energy embeddings), then frozen; downstream training
never touches its parameters. All activations are smooth (GELU, sigmoid,
softmax) so every path from contours to mel admits finite-difference
gradient checks at 64-bit precision.

Conventions:
  * masks are boolean, True at real positions; masked latent rows and
    contour entries are exact zeros;
  * pitch/energy contours live in [0, 1] (sigmoid-squashed), log-duration
    is unbounded; synthesis durations are round-half-up of its exp,
    clamped to [1, max_duration].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .config import BackboneConfig, CorpusConfig
from .corpus import SpeechUtterance
from .errors import ContractError, TrainingError
from . import serial


def single_thread_torch():
    """Pin intra-op parallelism so runs are byte-identical across hosts."""
    torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# batching helpers
# ---------------------------------------------------------------------------

def collate_text(texts: list[list[int]], vocab_size: int,
                 device=None) -> tuple[Tensor, Tensor]:
    """Pad phoneme id lists to a [B, L] id tensor and boolean mask."""
    if not texts:
        raise ContractError("empty batch")
    for t in texts:
        if len(t) == 0:
            raise ContractError("empty phoneme sequence")
        bad = [q for q in t if not 0 <= q < vocab_size]
        if bad:
            raise ContractError(f"phoneme id {bad[0]} outside vocabulary of {vocab_size}")
    max_len = max(len(t) for t in texts)
    ids = torch.zeros(len(texts), max_len, dtype=torch.long, device=device)
    mask = torch.zeros(len(texts), max_len, dtype=torch.bool, device=device)
    for i, t in enumerate(texts):
        ids[i, :len(t)] = torch.tensor(t, dtype=torch.long)
        mask[i, :len(t)] = True
    return ids, mask


def collate_speech(utts: list[SpeechUtterance], vocab_size: int,
                   dtype=torch.float32) -> dict[str, Tensor]:
    """Tensors for supervised pretraining: ids, masks, true contours, mels."""
    ids, mask = collate_text([u.text for u in utts], vocab_size)
    B, L = ids.shape
    pitch = torch.zeros(B, L, dtype=dtype)
    energy = torch.zeros(B, L, dtype=dtype)
    durations = torch.zeros(B, L, dtype=torch.long)
    for i, u in enumerate(utts):
        n = len(u.text)
        pitch[i, :n] = torch.tensor(u.true_prosody.pitch, dtype=dtype)
        energy[i, :n] = torch.tensor(u.true_prosody.energy, dtype=dtype)
        durations[i, :n] = torch.tensor(u.true_prosody.durations)
    frame_counts = [u.mel.shape[0] for u in utts]
    F = max(frame_counts)
    n_bins = utts[0].mel.shape[1]
    mel = torch.zeros(B, F, n_bins, dtype=dtype)
    frame_mask = torch.zeros(B, F, dtype=torch.bool)
    for i, u in enumerate(utts):
        mel[i, :frame_counts[i]] = torch.tensor(u.mel, dtype=dtype)
        frame_mask[i, :frame_counts[i]] = True
    return {"ids": ids, "mask": mask, "pitch": pitch, "energy": energy,
            "durations": durations, "mel": mel, "frame_mask": frame_mask}


def masked_mean(values: Tensor, mask: Tensor) -> Tensor:
    """Mean over positions where mask is True; mask may broadcast."""
    m = mask.to(values.dtype).expand_as(values)
    total = m.sum()
    if total.item() == 0:
        raise ContractError("masked_mean over an empty mask")
    return (values * m).sum() / total


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

class PositionalEncoding(nn.Module):
    """Fixed sinusoidal table added to the input."""

    def __init__(self, dim: int, max_len: int = 4096):
        super().__init__()
        pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
        freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32)
                         * (-math.log(10000.0) / dim))
        table = torch.zeros(max_len, dim)
        table[:, 0::2] = torch.sin(pos * freq)
        table[:, 1::2] = torch.cos(pos * freq)
        self.register_buffer("table", table)

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        if n > self.table.shape[0]:
            raise ContractError(f"sequence of {n} exceeds positional table")
        return x + self.table[:n]


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product attention over one sequence."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ContractError("model dim must divide evenly into heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        B, L, D = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def heads(t):
            return t.view(B, L, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(q), heads(k), heads(v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        bias = torch.where(mask[:, None, None, :], 0.0, -1e9).to(x.dtype)
        attn = torch.softmax(scores + bias, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(B, L, D)
        return self.out(mixed)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.attn = SelfAttention(dim, n_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(),
                                 nn.Linear(ffn_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x, mask))
        x = self.norm2(x + self.ffn(x))
        return x * mask.unsqueeze(-1).to(x.dtype)  # keep padding at exact zero


class VariancePredictor(nn.Module):
    """Position-wise scalar head: two k=3 convolutions then a projection."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, hidden, kernel_size=3, padding=1)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel_size=3, padding=1)
        self.norm2 = nn.LayerNorm(hidden)
        self.proj = nn.Linear(hidden, 1)

    def forward(self, h: Tensor, mask: Tensor) -> Tensor:
        m = mask.unsqueeze(-1).to(h.dtype)
        x = h * m
        x = torch.nn.functional.gelu(self.conv1(x.transpose(1, 2)).transpose(1, 2))
        x = self.norm1(x) * m
        x = torch.nn.functional.gelu(self.conv2(x.transpose(1, 2)).transpose(1, 2))
        x = self.norm2(x) * m
        return self.proj(x).squeeze(-1)


# ---------------------------------------------------------------------------
# contour container
# ---------------------------------------------------------------------------

@dataclass
class ProsodyTensors:
    """Batched contour tensors, each [B, L]; masked entries are zero."""

    pitch: Tensor
    energy: Tensor
    log_duration: Tensor

    def durations(self, mask: Tensor, max_duration: int) -> Tensor:
        """Round-half-up of exp(log_duration), clamped to [1, max_duration];
        masked positions get 0 repeats."""
        d = torch.floor(torch.exp(self.log_duration.detach()) + 0.5)
        d = d.clamp(1, max_duration).long()
        return d * mask.long()

    def detach(self) -> "ProsodyTensors":
        return ProsodyTensors(self.pitch.detach(), self.energy.detach(),
                              self.log_duration.detach())


# ---------------------------------------------------------------------------
# the backbone
# ---------------------------------------------------------------------------

class AcousticBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig, vocab_size: int, mel_bins: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.mel_bins = mel_bins
        d = cfg.model_dim
        self.embed = nn.Embedding(vocab_size, d)
        self.pos_enc = PositionalEncoding(d)
        self.encoder_blocks = nn.ModuleList(
            TransformerBlock(d, cfg.n_heads, cfg.ffn_dim)
            for _ in range(cfg.encoder_blocks))
        self.pitch_predictor = VariancePredictor(d, cfg.var_hidden)
        self.energy_predictor = VariancePredictor(d, cfg.var_hidden)
        self.duration_predictor = VariancePredictor(d, cfg.var_hidden)
        self.pitch_embedding = nn.Embedding(cfg.pitch_bins, d)
        self.energy_embedding = nn.Embedding(cfg.energy_bins, d)
        self.decoder_blocks = nn.ModuleList(
            TransformerBlock(d, cfg.n_heads, cfg.ffn_dim)
            for _ in range(cfg.decoder_blocks))
        self.mel_head = nn.Linear(d, mel_bins)

    # -- stages ------------------------------------------------------------

    def encode(self, ids: Tensor, mask: Tensor) -> Tensor:
        if ids.max().item() >= self.vocab_size or ids.min().item() < 0:
            raise ContractError(f"phoneme id outside vocabulary of {self.vocab_size}")
        h = self.pos_enc(self.embed(ids)) * mask.unsqueeze(-1).to(self.embed.weight.dtype)
        for block in self.encoder_blocks:
            h = block(h, mask)
        return h

    def predict_variance(self, latents: Tensor, mask: Tensor) -> ProsodyTensors:
        m = mask.to(latents.dtype)
        pitch = torch.sigmoid(self.pitch_predictor(latents, mask)) * m
        energy = torch.sigmoid(self.energy_predictor(latents, mask)) * m
        log_duration = self.duration_predictor(latents, mask) * m
        return ProsodyTensors(pitch, energy, log_duration)

    def embed_value(self, values: Tensor, table: nn.Embedding) -> Tensor:
        """Piecewise-linear lookup over a table of learned bin vectors.

        A value v in [0, 1] lands at position v * (n_bins - 1) and blends
        its two neighboring bin embeddings, so the map stays continuous
        and carries gradient back to v, while v = k / (n_bins - 1) hits
        bin k exactly (v = 0 is exactly the bin-0 vector).
        """
        n_bins = table.num_embeddings
        pos = values.clamp(0.0, 1.0) * (n_bins - 1)
        lo = pos.detach().floor().long().clamp(0, n_bins - 2)
        frac = (pos - lo.to(pos.dtype)).unsqueeze(-1)
        return table(lo) * (1.0 - frac) + table(lo + 1) * frac

    def length_regulate(self, latents: Tensor, pitch: Tensor, energy: Tensor,
                        durations: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
        """Add binned pitch/energy embeddings, then repeat row l d_l times.

        Returns padded frame latents [B, F, d] and their boolean mask.
        """
        if torch.any(durations[mask] < 1):
            raise ContractError("unmasked durations must be >= 1")
        p_emb = self.embed_value(pitch, self.pitch_embedding)
        e_emb = self.embed_value(energy, self.energy_embedding)
        rows = (latents + p_emb + e_emb) * mask.unsqueeze(-1).to(latents.dtype)
        counts = durations * mask.long()
        lengths = counts.sum(dim=1)
        F = int(lengths.max().item())
        B, _, D = latents.shape
        frames = latents.new_zeros(B, F, D)
        frame_mask = torch.zeros(B, F, dtype=torch.bool, device=latents.device)
        for i in range(B):
            expanded = torch.repeat_interleave(rows[i], counts[i], dim=0)
            frames[i, :expanded.shape[0]] = expanded
            frame_mask[i, :expanded.shape[0]] = True
        return frames, frame_mask

    def decode(self, frames: Tensor, frame_mask: Tensor) -> Tensor:
        h = self.pos_enc(frames) * frame_mask.unsqueeze(-1).to(frames.dtype)
        for block in self.decoder_blocks:
            h = block(h, frame_mask)
        return self.mel_head(h) * frame_mask.unsqueeze(-1).to(frames.dtype)

    # -- composite paths ---------------------------------------------------

    def synthesize_from_contours(self, latents: Tensor, contours: ProsodyTensors,
                                 mask: Tensor) -> tuple[Tensor, Tensor]:
        durations = contours.durations(mask, self.cfg.max_duration)
        frames, frame_mask = self.length_regulate(
            latents, contours.pitch, contours.energy, durations, mask)
        return self.decode(frames, frame_mask), frame_mask

    def two_stage(self, ids: Tensor, mask: Tensor) -> tuple[Tensor, ProsodyTensors, Tensor]:
        """Plain text-to-mel path with no sign conditioning."""
        latents = self.encode(ids, mask)
        contours = self.predict_variance(latents, mask)
        mel, frame_mask = self.synthesize_from_contours(latents, contours, mask)
        return mel, contours, frame_mask


# ---------------------------------------------------------------------------
# supervised pretraining
# ---------------------------------------------------------------------------

def _masked_mse(pred: Tensor, target: Tensor, mask: Tensor) -> Tensor:
    return masked_mean((pred - target) ** 2, mask)


def pretrain_losses(model: AcousticBackbone, batch: dict[str, Tensor]) -> dict[str, Tensor]:
    """Teacher-forced losses: contour MSEs plus L1 mel reconstruction.

    True durations and true pitch/energy feed the adaptor, so predicted
    and reference mels align frame-for-frame.
    """
    mask = batch["mask"]
    latents = model.encode(batch["ids"], mask)
    contours = model.predict_variance(latents, mask)
    log_true_d = torch.where(mask, batch["durations"], 1).to(latents.dtype).log()
    frames, frame_mask = model.length_regulate(
        latents, batch["pitch"], batch["energy"], batch["durations"], mask)
    mel = model.decode(frames, frame_mask)
    return {
        "pitch_mse": _masked_mse(contours.pitch, batch["pitch"], mask),
        "energy_mse": _masked_mse(contours.energy, batch["energy"], mask),
        "duration_mse": _masked_mse(contours.log_duration, log_true_d, mask),
        "mel_l1": masked_mean((mel - batch["mel"]).abs(), frame_mask.unsqueeze(-1)),
    }


def pretrain_backbone(corpus: list[SpeechUtterance], cfg: BackboneConfig,
                      corpus_cfg: CorpusConfig,
                      steps: int | None = None) -> tuple[AcousticBackbone, dict]:
    """Train the backbone on the speech corpus; returns it frozen.

    Deterministic given (cfg, corpus): a single thread, a fixed torch seed
    for initialization, and one numpy generator driving batch selection.
    """
    if not corpus:
        raise ContractError("empty speech corpus")
    single_thread_torch()
    steps = cfg.pretrain_steps if steps is None else steps
    torch.manual_seed(cfg.seed)
    model = AcousticBackbone(cfg, corpus_cfg.vocab_size, corpus_cfg.mel_bins)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.pretrain_lr)
    history = {"mel_l1": [], "total": []}
    for step in range(steps):
        idx = rng.choice(len(corpus), size=min(cfg.pretrain_batch, len(corpus)),
                         replace=False)
        batch = collate_speech([corpus[i] for i in idx], corpus_cfg.vocab_size)
        losses = pretrain_losses(model, batch)
        total = sum(losses.values())
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite pretraining loss at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        history["mel_l1"].append(float(losses["mel_l1"].detach()))
        history["total"].append(float(total.detach()))
    model.eval()
    model.requires_grad_(False)
    return model, history


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_backbone(model: AcousticBackbone, path, step: int = 0, extra: dict | None = None):
    header = {
        "kind": "backbone",
        "step": step,
        "backbone_config": model.cfg.to_dict(),
        "vocab_size": model.vocab_size,
        "mel_bins": model.mel_bins,
    }
    if extra:
        header.update(extra)
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    serial.save_checkpoint(path, header, tensors)


def load_backbone(path) -> tuple[AcousticBackbone, dict]:
    """Rebuild the backbone from a checkpoint, frozen and in eval mode."""
    header, tensors = serial.load_checkpoint(path)
    if header.get("kind") != "backbone":
        raise ContractError(f"{path}: not a backbone checkpoint")
    cfg = BackboneConfig.from_dict(header["backbone_config"])
    model = AcousticBackbone(cfg, int(header["vocab_size"]), int(header["mel_bins"]))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    model.requires_grad_(False)
    return model, header
