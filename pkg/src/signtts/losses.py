"""Training objectives as pure scalar functions.

Every function accepts python floats, numpy values, or torch tensors;
tensor inputs keep their dtype (gradients flow), scalar inputs are
promoted to float64 so oracle comparisons are exact. Batched tensors
reduce by mean over all elements.

Two behavior switches mirror internal inconsistencies in the source
formulation of the adversarial and range objectives:

  * ``disc_convention``: "real_high" (default) labels real crops 1 and
    fake crops 0, restoring opposition with the generator objective
    |1 - d_fake|^2; "fake_high" swaps the labels, which makes the
    generator and discriminator agree — kept only for demonstration.
  * ``ir_direction``: "penalize_above" (default) charges the generator
    when its contour spread exceeds the plain path's; "penalize_below"
    flips the subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .errors import ConfigError, StatsError

LOG_FLOOR = 1e-12

DISC_CONVENTIONS = ("real_high", "fake_high")
IR_DIRECTIONS = ("penalize_above", "penalize_below")


def _as_t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def standardize(values: Tensor) -> Tensor:
    """Population z-score over all elements; a spread below 1e-8 maps to
    all zeros rather than amplifying noise."""
    values = _as_t(values)
    std = values.std(unbiased=False)
    if float(std) < 1e-8:
        return torch.zeros_like(values)
    return (values - values.mean()) / std


def gate_weight_loss(w_sign) -> Tensor:
    """|1 - w_sign|: pushes the mixing gate toward the sign path."""
    return (1.0 - _as_t(w_sign)).abs().mean()


def sign_recon_loss(predicted, target) -> Tensor:
    """Cross-entropy of predicted motion distributions against binned labels.

    Shapes [..., 4, S]: four channels (hand/face x vel/acc) over S bins,
    averaged over the channel axis, summed over bins, mean over any batch
    axes. Target bins with zero mass contribute exactly zero; predictions
    are floored at 1e-12 inside the log to absorb softmax underflow.
    """
    predicted = _as_t(predicted)
    target = _as_t(target)
    if predicted.shape != target.shape or predicted.shape[-2] != 4:
        raise ConfigError(
            f"expected matching [..., 4, S] shapes, got {tuple(predicted.shape)} "
            f"vs {tuple(target.shape)}")
    terms = -target * torch.log(predicted.clamp(min=LOG_FLOOR))
    per_sample = terms.sum(dim=-1).mean(dim=-1)
    return per_sample.mean()


def motion_align_loss(energy_mean, pitch_mean, hand_vel_mean, face_vel_mean,
                      margin) -> Tensor:
    """Margin-hinged L1 between standardized prosody and motion means.

    Energy pairs with hand velocity, pitch with face velocity; deviations
    inside the margin cost nothing.
    """
    e, p = _as_t(energy_mean), _as_t(pitch_mean)
    h, f = _as_t(hand_vel_mean), _as_t(face_vel_mean)
    m = _as_t(margin)
    return (torch.relu((e - h).abs() - m) + torch.relu((p - f).abs() - m)).mean()


def discriminator_loss(d_real, d_fake, convention: str = "real_high") -> Tensor:
    """Least-squares discriminator objective over crop scores."""
    d_real, d_fake = _as_t(d_real), _as_t(d_fake)
    if convention == "real_high":
        return 0.5 * (((1.0 - d_real) ** 2).mean() + (d_fake ** 2).mean())
    if convention == "fake_high":
        return 0.5 * ((d_real ** 2).mean() + ((1.0 - d_fake) ** 2).mean())
    raise ConfigError(f"unknown disc_convention {convention!r}")


def adversarial_loss(d_fake) -> Tensor:
    """|1 - d_fake|^2: the generator drives fake-crop scores toward 1.

    Deliberately convention-independent; under "fake_high" it no longer
    opposes the discriminator, which is the demonstration that convention
    exists to make.
    """
    return ((1.0 - _as_t(d_fake)) ** 2).mean()


def intonation_range_loss(gen_pitch_std, gen_energy_std, base_pitch_std,
                          base_energy_std, direction: str = "penalize_above") -> Tensor:
    """One-sided hinge between generated and plain-path contour spreads."""
    gp, ge = _as_t(gen_pitch_std), _as_t(gen_energy_std)
    bp, be = _as_t(base_pitch_std), _as_t(base_energy_std)
    if direction == "penalize_above":
        return (torch.relu(gp - bp) + torch.relu(ge - be)).mean()
    if direction == "penalize_below":
        return (torch.relu(bp - gp) + torch.relu(be - ge)).mean()
    raise ConfigError(f"unknown ir_direction {direction!r}")


def speaker_range_loss(gen_pitch_mean, gen_energy_mean, speaker_pitch_mean,
                       speaker_pitch_std, speaker_energy_mean,
                       speaker_energy_std) -> Tensor:
    """Hinge on contour means leaving the speaker's 3-sigma interval."""
    sp_p, sp_e = _as_t(speaker_pitch_std), _as_t(speaker_energy_std)
    if torch.any(sp_p <= 0) or torch.any(sp_e <= 0):
        raise StatsError("speaker stds must be positive")
    p = torch.relu((_as_t(gen_pitch_mean) - _as_t(speaker_pitch_mean)).abs() - 3.0 * sp_p)
    e = torch.relu((_as_t(gen_energy_mean) - _as_t(speaker_energy_mean)).abs() - 3.0 * sp_e)
    return (p + e).mean()


def naturalness_loss(adversarial, intonation_range, speaker_range, weights) -> Tensor:
    """adversarial + lambda_ir * range + lambda_sl * speaker terms."""
    return (_as_t(adversarial) + weights.ir * _as_t(intonation_range)
            + weights.sl * _as_t(speaker_range))


def generator_total_loss(natural, sign_recon, motion_align, gate_weight,
                         weights) -> Tensor:
    """Weighted sum of the naturalness composite and the sign-side terms."""
    return (_as_t(natural) + weights.signrec * _as_t(sign_recon)
            + weights.promo * _as_t(motion_align) + weights.weight * _as_t(gate_weight))


@dataclass(frozen=True)
class LossReport:
    """Per-step generator loss components; ``natural`` and ``total`` are
    recomputed from the components in float64 so the combination identity
    holds to 1e-9 regardless of training dtype."""

    adversarial: float
    intonation_range: float
    speaker_range: float
    sign_recon: float
    motion_align: float
    gate_weight: float
    natural: float
    total: float

    @classmethod
    def from_components(cls, weights, adversarial, intonation_range,
                        speaker_range, sign_recon, motion_align, gate_weight,
                        include_natural: bool = True) -> "LossReport":
        """``include_natural=False`` drops the naturalness composite from the
        total (the component values are still reported), matching ablation
        configurations that train without the adversarial side."""
        vals = {k: float(v.detach() if isinstance(v, Tensor) else v) for k, v in [
            ("adversarial", adversarial), ("intonation_range", intonation_range),
            ("speaker_range", speaker_range), ("sign_recon", sign_recon),
            ("motion_align", motion_align), ("gate_weight", gate_weight)]}
        natural = float(naturalness_loss(
            vals["adversarial"], vals["intonation_range"], vals["speaker_range"], weights))
        total = float(generator_total_loss(
            natural if include_natural else 0.0,
            vals["sign_recon"], vals["motion_align"], vals["gate_weight"], weights))
        return cls(natural=natural, total=total, **vals)

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in (
            "adversarial", "intonation_range", "speaker_range", "sign_recon",
            "motion_align", "gate_weight", "natural", "total")}
