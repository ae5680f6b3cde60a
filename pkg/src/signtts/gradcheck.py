"""Central-difference gradient verification for every trainable path.

Each check builds a small float64 instance of a module (or calls a loss
directly), picks a handful of coordinates from its parameters and
inputs, and compares the analytic gradient against a two-sided finite
difference. Hinged losses are additionally probed a fixed 1e-3 offset
from their kinks, where one-sided subgradient bugs would show up.

The reported number per check is the worst relative error, with a small
absolute floor in the denominator so that exactly-zero gradients do not
divide noise by noise.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor

from .backbone import AcousticBackbone, ProsodyTensors, single_thread_torch
from .config import BackboneConfig
from .corpus import normalize_keypoints
from .losses import (adversarial_loss, discriminator_loss, gate_weight_loss,
                     intonation_range_loss, motion_align_loss, sign_recon_loss,
                     speaker_range_loss)
from .sign_branch import ProsodyEstimator, ProsodyMixer, VisualBackbone

TOLERANCE = 1e-4

_H = 1e-5
_DENOM_FLOOR = 1e-4


def _central_difference(fn, tensor: Tensor, idx: int, h: float) -> float:
    flat = tensor.detach().view(-1)
    orig = flat[idx].item()
    with torch.no_grad():
        flat[idx] = orig + h
        plus = float(fn())
        flat[idx] = orig - h
        minus = float(fn())
        flat[idx] = orig
    return (plus - minus) / (2.0 * h)


def max_rel_err(fn, tensors: list[Tensor], rng: np.random.Generator,
                samples: int = 4, h: float = _H) -> float:
    """Worst-case relative gradient error over sampled coordinates."""
    for t in tensors:
        t.requires_grad_(True)
    loss = fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    worst = 0.0
    for t, g in zip(tensors, grads):
        n = t.numel()
        for idx in rng.choice(n, size=min(samples, n), replace=False):
            idx = int(idx)
            fd = _central_difference(fn, t, idx, h)
            an = 0.0 if g is None else float(g.reshape(-1)[idx])
            err = abs(fd - an) / max(abs(fd), abs(an), _DENOM_FLOOR)
            worst = max(worst, err)
    return worst


def _t(values) -> Tensor:
    return torch.tensor(values, dtype=torch.float64)


def check_losses(rng: np.random.Generator) -> list[tuple[str, float]]:
    results = []

    w = _t(rng.uniform(0.1, 0.9, size=5))
    results.append(("gate_weight", max_rel_err(
        lambda: gate_weight_loss(w), [w], rng, samples=5)))

    pred = _t(rng.uniform(0.05, 0.95, size=(2, 4, 6)))
    target = torch.softmax(_t(rng.normal(size=(2, 4, 6))), dim=-1) * 0.9
    results.append(("sign_recon", max_rel_err(
        lambda: sign_recon_loss(pred, target), [pred], rng, samples=6)))

    margin = 0.5
    e, p = _t(rng.normal(size=3)), _t(rng.normal(size=3))
    hv, fv = _t(rng.normal(size=3)), _t(rng.normal(size=3))
    results.append(("motion_align", max_rel_err(
        lambda: motion_align_loss(e, p, hv, fv, margin), [e, p, hv, fv], rng,
        samples=3)))
    for side, off in (("above", 1e-3), ("below", -1e-3)):
        ek = _t([0.2 + margin + off])
        hk = _t([0.2])
        results.append((f"motion_align_kink_{side}", max_rel_err(
            lambda: motion_align_loss(ek, _t([0.0]), hk, _t([0.0]), margin),
            [ek, hk], rng, samples=1)))

    for conv in ("real_high", "fake_high"):
        dr = _t(rng.uniform(-0.5, 1.5, size=4))
        df = _t(rng.uniform(-0.5, 1.5, size=4))
        results.append((f"discriminator_{conv}", max_rel_err(
            lambda: discriminator_loss(dr, df, conv), [dr, df], rng, samples=4)))

    df = _t(rng.uniform(-0.5, 1.5, size=4))
    results.append(("adversarial", max_rel_err(
        lambda: adversarial_loss(df), [df], rng, samples=4)))

    for direction in ("penalize_above", "penalize_below"):
        gp, ge = _t(rng.uniform(0.1, 0.4, size=2)), _t(rng.uniform(0.1, 0.4, size=2))
        bp, be = _t(rng.uniform(0.1, 0.4, size=2)), _t(rng.uniform(0.1, 0.4, size=2))
        results.append((f"intonation_range_{direction}", max_rel_err(
            lambda: intonation_range_loss(gp, ge, bp, be, direction),
            [gp, ge, bp, be], rng, samples=2)))
        for side, off in (("above", 1e-3), ("below", -1e-3)):
            gk = _t([0.3 + off])
            bk = _t([0.3])
            results.append((f"intonation_range_{direction}_kink_{side}",
                            max_rel_err(
                                lambda: intonation_range_loss(
                                    gk, _t([0.1]), bk, _t([0.4]), direction),
                                [gk, bk], rng, samples=1)))

    mp, sp, me, se = 0.5, 0.05, 0.6, 0.04
    gp = _t(rng.uniform(0.2, 0.9, size=3))
    ge = _t(rng.uniform(0.2, 0.9, size=3))
    results.append(("speaker_range", max_rel_err(
        lambda: speaker_range_loss(gp, ge, mp, sp, me, se), [gp, ge], rng,
        samples=3)))
    for side, off in (("above", 1e-3), ("below", -1e-3)):
        gk = _t([mp + 3.0 * sp + off])
        results.append((f"speaker_range_kink_{side}", max_rel_err(
            lambda: speaker_range_loss(gk, _t([me]), mp, sp, me, se), [gk],
            rng, samples=1)))

    return results


def _randomize(params, rng: np.random.Generator, std: float = 0.05):
    """Move zero-initialized projections off zero so every path is live."""
    with torch.no_grad():
        for p in params:
            p.copy_(torch.tensor(rng.normal(0.0, std, size=tuple(p.shape)),
                                 dtype=p.dtype))


def check_mixer(rng: np.random.Generator) -> list[tuple[str, float]]:
    dim, heads, L, S = 16, 2, 5, 7
    mixer = ProsodyMixer(dim, heads, channels="all").double()
    _randomize(list(mixer.residual_attn.out.parameters())
               + list(mixer.gate_attn.out.parameters()), rng)
    latents = _t(rng.normal(size=(1, L, dim)))
    sign_feats = _t(rng.normal(size=(1, S, dim)))
    mask = torch.ones(1, L, dtype=torch.bool)
    sign_mask = torch.ones(1, S, dtype=torch.bool)
    pitch = _t(rng.uniform(0.2, 0.8, size=(1, L)))
    energy = _t(rng.uniform(0.2, 0.8, size=(1, L)))
    logd = _t(rng.normal(0.8, 0.2, size=(1, L)))
    probes = [_t(rng.normal(size=(1, L))) for _ in range(4)]

    def fn():
        contours = ProsodyTensors(pitch=pitch, energy=energy, log_duration=logd)
        out = mixer(latents, contours, sign_feats, mask, sign_mask)
        return (out.contours.pitch * probes[0]).sum() \
            + (out.contours.energy * probes[1]).sum() \
            + (out.contours.log_duration * probes[2]).sum() \
            + (out.gate * probes[3]).sum()

    params = list(mixer.parameters())
    return [
        ("mixer_params", max_rel_err(fn, params, rng)),
        ("mixer_inputs", max_rel_err(
            fn, [latents, sign_feats, pitch, energy, logd], rng)),
    ]


def check_visual(rng: np.random.Generator) -> list[tuple[str, float]]:
    dim, T = 16, 12
    net = VisualBackbone(dim, joint_channels=4, temporal_channels=8).double()
    raw = rng.normal(0.0, 0.3, size=(T, 13, 2)) + np.array([0.0, 0.5])
    # near-rigid shoulders so normalized widths stay inside the contract
    raw[:, 5] = np.array([-0.6, 0.0]) + rng.normal(0.0, 0.005, size=(T, 2))
    raw[:, 6] = np.array([0.6, 0.0]) + rng.normal(0.0, 0.005, size=(T, 2))
    kps = torch.tensor(normalize_keypoints(raw), dtype=torch.float64).unsqueeze(0)
    mask = torch.ones(1, T, dtype=torch.bool)
    out_len = (T + 3) // 4
    probe = _t(rng.normal(size=(1, out_len, dim)))

    def fn():
        feats, _ = net(kps, mask)
        return (feats * probe).sum()

    return [
        ("visual_params", max_rel_err(fn, list(net.parameters()), rng)),
        ("visual_input", max_rel_err(fn, [kps], rng, samples=6)),
    ]


def check_estimator(rng: np.random.Generator) -> list[tuple[str, float]]:
    n_bins, L = 8, 9
    est = ProsodyEstimator(n_bins, channels=8).double()
    pitch = _t(rng.uniform(0.1, 0.9, size=(1, L)))
    energy = _t(rng.uniform(0.1, 0.9, size=(1, L)))
    mask = torch.ones(1, L, dtype=torch.bool)
    target = torch.softmax(_t(rng.normal(size=(1, 4, n_bins))), dim=-1) * 0.9

    def fn():
        return sign_recon_loss(est(pitch, energy, mask), target)

    return [
        ("estimator_params", max_rel_err(fn, list(est.parameters()), rng)),
        ("estimator_inputs", max_rel_err(fn, [pitch, energy], rng, samples=5)),
    ]


def check_decoder(rng: np.random.Generator) -> list[tuple[str, float]]:
    cfg = BackboneConfig(model_dim=16, n_heads=2, ffn_dim=32, encoder_blocks=1,
                         decoder_blocks=1, var_hidden=16, pitch_bins=8,
                         energy_bins=8)
    net = AcousticBackbone(cfg, vocab_size=16, mel_bins=8).double()
    K = 6
    frames = _t(rng.normal(size=(1, K, cfg.model_dim)))
    mask = torch.ones(1, K, dtype=torch.bool)
    probe = _t(rng.normal(size=(1, K, 8)))

    def fn():
        return (net.decode(frames, mask) * probe).sum()

    params = [p for blk in net.decoder_blocks for p in blk.parameters()]
    params += list(net.mel_head.parameters())
    return [
        ("decoder_params", max_rel_err(fn, params, rng)),
        ("decoder_input", max_rel_err(fn, [frames], rng, samples=6)),
    ]


def check_adaptor(rng: np.random.Generator) -> list[tuple[str, float]]:
    """Contours to mel, end to end: the interpolated pitch/energy
    embeddings must carry gradient through length regulation and the
    decoder; log-duration reaches the mel only through integer frame
    counts, so both sides of its comparison are exactly zero."""
    cfg = BackboneConfig(model_dim=16, n_heads=2, ffn_dim=32, encoder_blocks=1,
                         decoder_blocks=1, var_hidden=16, pitch_bins=8,
                         energy_bins=8)
    net = AcousticBackbone(cfg, vocab_size=16, mel_bins=8).double()
    L = 6
    ids = torch.tensor(rng.integers(0, 16, size=(1, L)))
    mask = torch.ones(1, L, dtype=torch.bool)
    latents = net.encode(ids, mask).detach()
    pitch = _t(rng.uniform(0.1, 0.9, size=(1, L)))
    energy = _t(rng.uniform(0.1, 0.9, size=(1, L)))
    logd = _t(np.full((1, L), 0.7))
    n_frames = int(np.floor(np.exp(0.7) + 0.5)) * L
    probe = _t(rng.normal(size=(1, n_frames, 8)))

    def fn():
        contours = ProsodyTensors(pitch=pitch, energy=energy, log_duration=logd)
        mel, _ = net.synthesize_from_contours(latents, contours, mask)
        return (mel * probe).sum()

    return [("contours_to_mel", max_rel_err(fn, [pitch, energy, logd], rng,
                                            samples=4))]


def run_all(seed: int = 0) -> list[tuple[str, float]]:
    """Every gradient check, as (name, worst relative error) rows."""
    single_thread_torch()
    rng = np.random.default_rng(seed)
    results = []
    results.extend(check_losses(rng))
    results.extend(check_mixer(rng))
    results.extend(check_visual(rng))
    results.extend(check_estimator(rng))
    results.extend(check_decoder(rng))
    results.extend(check_adaptor(rng))
    return results


def format_results(results: list[tuple[str, float]],
                   tolerance: float = TOLERANCE) -> str:
    width = max(len(name) for name, _ in results)
    lines = [f"{'check':<{width}}  {'max_rel_err':>12}  status"]
    for name, err in results:
        status = "ok" if err < tolerance else "FAIL"
        lines.append(f"{name:<{width}}  {err:>12.3e}  {status}")
    return "\n".join(lines)
