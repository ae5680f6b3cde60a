"""Adversarial training loop over the unpaired corpora.

One `Trainer` owns all mutable state: the frozen acoustic backbone, the
trainable sign branch and discriminator, both optimizers, the step
counter, and a single numpy generator that drives every stochastic
choice (batch indices, speaker draws, crop offsets). Checkpoints capture
all of it, so save-then-resume reproduces a straight-through run's
metrics byte for byte.

Sign and speech samples are never paired: generator batches come from
the sign training split, discriminator real batches from the speech
corpus, and the only cross-modal couplings are the loss terms.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import losses, serial
from .backbone import (AcousticBackbone, ProsodyTensors, collate_text,
                       load_backbone, single_thread_torch)
from .config import RunConfig
from .corpus import (KeypointSequence, SpeechUtterance, speaker_stats,
                     split_corpus)
from .discriminator import CropDiscriminator, crop_accuracy, make_crops
from .errors import (CheckpointMismatchError, ContractError, StatsError,
                     TrainingError)
from .losses import LossReport
from .sign_branch import SignBranch, collate_sign
from .sign_prosody import clip_labels, mean_speeds


@dataclass(frozen=True)
class MotionStats:
    """Corpus-level mean/std of per-clip hand and face velocity means,
    the basis for standardizing the motion side of the alignment loss."""

    hand_mean: float
    hand_std: float
    face_mean: float
    face_std: float

    @classmethod
    def from_clips(cls, clips: list[KeypointSequence]) -> "MotionStats":
        if len(clips) < 2:
            raise StatsError("need at least 2 clips for motion statistics")
        hands = np.array([mean_speeds(c.frames)["hand_vel"] for c in clips])
        faces = np.array([mean_speeds(c.frames)["face_vel"] for c in clips])
        if hands.std() < 1e-8 or faces.std() < 1e-8:
            raise StatsError("degenerate motion spread across the corpus")
        return cls(float(hands.mean()), float(hands.std()),
                   float(faces.mean()), float(faces.std()))


def _masked_stats(values: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-row mean and population std over unmasked positions."""
    m = mask.to(values.dtype)
    n = m.sum(dim=1)
    mean = (values * m).sum(dim=1) / n
    var = (((values - mean[:, None]) ** 2) * m).sum(dim=1) / n
    return mean, torch.sqrt(var + 1e-12)  # keeps the gradient finite at zero spread


@dataclass
class ForwardOutput:
    mixed: ProsodyTensors
    plain: ProsodyTensors
    mask: torch.Tensor
    mel: torch.Tensor
    frame_mask: torch.Tensor
    w_sign: torch.Tensor
    pred_labels: torch.Tensor

    def mel_list(self) -> list[torch.Tensor]:
        return [self.mel[i, :int(self.frame_mask[i].sum())]
                for i in range(self.mel.shape[0])]


class Trainer:
    def __init__(self, cfg: RunConfig, sign_clips: list[KeypointSequence],
                 speech: list[SpeechUtterance], backbone: AcousticBackbone):
        single_thread_torch()
        cfg.validate()
        self.cfg = cfg
        tc = cfg.train
        if any(p.requires_grad for p in backbone.parameters()):
            raise ContractError("backbone must be frozen before adversarial training")
        self.backbone = backbone

        self.sign_train, self.sign_test = split_corpus(sign_clips, tc.test_fraction)
        if not self.sign_train or not speech:
            raise ContractError("need nonempty sign training split and speech corpus")
        self.speech = speech

        self.labels = {
            c.clip_id: torch.tensor(clip_labels(c, tc.label_bins).stacked(),
                                    dtype=torch.float32)
            for c in self.sign_train}
        self.motion = MotionStats.from_clips(self.sign_train)
        self.motion_z = {}
        for c in self.sign_train:
            s = mean_speeds(c.frames)
            self.motion_z[c.clip_id] = (
                (s["hand_vel"] - self.motion.hand_mean) / self.motion.hand_std,
                (s["face_vel"] - self.motion.face_mean) / self.motion.face_std)
        self.speakers = speaker_stats(speech)
        self.speaker_ids = sorted(self.speakers)

        torch.manual_seed(tc.seed)
        self.branch = SignBranch(
            dim=backbone.cfg.model_dim, n_heads=tc.mixer_heads,
            n_bins=tc.label_bins, visual_channels=tc.visual_channels,
            temporal_channels=tc.temporal_channels,
            estimator_channels=tc.estimator_channels,
            mixer_channels=tc.adapm_channels)
        self.disc = CropDiscriminator(backbone.mel_bins, tc.disc_channels,
                                      tc.crop_frames)
        self.opt_g = torch.optim.AdamW(self.branch.parameters(), lr=tc.gen_lr,
                                       weight_decay=tc.weight_decay)
        self.opt_d = torch.optim.AdamW(self.disc.parameters(), lr=tc.disc_lr,
                                       weight_decay=tc.weight_decay)
        self.rng = np.random.default_rng(tc.seed)
        self.step = 0
        self.acc_window: deque[float] = deque(maxlen=100)

        self._any_toggle = tc.use_natural or tc.use_signrec or tc.use_promo
        w = tc.weights
        self.report_weights = replace(
            w,
            signrec=w.signrec if tc.use_signrec else 0.0,
            promo=w.promo if tc.use_promo else 0.0,
            weight=w.weight if self._any_toggle else 0.0,
            ir=w.ir if tc.use_natural else 0.0,
            sl=w.sl if tc.use_natural else 0.0)

    # -- forward -----------------------------------------------------------

    def forward_full(self, clips: list[KeypointSequence]) -> ForwardOutput:
        """Sign-conditioned synthesis: the full path from keypoints to mel."""
        batch = collate_sign(clips)
        feats, sign_mask = self.branch.visual(batch["kps"], batch["frame_mask"])
        ids, mask = collate_text(batch["texts"], self.backbone.vocab_size)
        latents = self.backbone.encode(ids, mask)
        plain = self.backbone.predict_variance(latents, mask)
        mix = self.branch.mixer(latents, plain, feats, mask, sign_mask)
        pred_labels = self.branch.estimator(mix.contours.pitch,
                                            mix.contours.energy, mask)
        mel, frame_mask = self.backbone.synthesize_from_contours(
            latents, mix.contours, mask)
        return ForwardOutput(mixed=mix.contours, plain=plain, mask=mask,
                             mel=mel, frame_mask=frame_mask,
                             w_sign=mix.w_sign, pred_labels=pred_labels)

    def _check_finite(self, named: list[tuple[str, torch.Tensor]]):
        for name, value in named:
            if not torch.isfinite(value).all():
                raise TrainingError(
                    f"non-finite {name} loss at step {self.step + 1}")

    # -- steps -------------------------------------------------------------

    def _augment(self, clips: list[KeypointSequence]) -> list[KeypointSequence]:
        """Random plane rotation, mirror, and time reversal per clip.

        All three transforms preserve joint distances and per-step
        displacement magnitudes, so the precomputed motion labels and
        mean speeds stay exactly valid for the transformed clip. Keeps
        the branch from keying on raw coordinate patterns of individual
        training clips.
        """
        out = []
        for c in clips:
            theta = self.rng.uniform(-0.5, 0.5)
            co, si = np.cos(theta), np.sin(theta)
            frames = c.frames @ np.array([[co, -si], [si, co]]).T
            if self.rng.random() < 0.5:
                frames = frames * np.array([-1.0, 1.0])
            if self.rng.random() < 0.5:
                frames = frames[::-1]
            out.append(replace(c, frames=np.ascontiguousarray(frames)))
        return out

    def generator_step(self, clips: list[KeypointSequence],
                       speaker_ids: np.ndarray) -> tuple[LossReport, float]:
        """One optimizer update of the sign branch; returns the loss report
        and the batch-mean gate weight."""
        tc = self.cfg.train
        if tc.augment_sign:
            clips = self._augment(clips)
        out = self.forward_full(clips)

        targets = torch.stack([self.labels[c.clip_id] for c in clips])
        sign_recon = losses.sign_recon_loss(out.pred_labels, targets)
        gate_weight = losses.gate_weight_loss(out.w_sign)

        mean_p, std_p = _masked_stats(out.mixed.pitch, out.mask)
        mean_e, std_e = _masked_stats(out.mixed.energy, out.mask)
        _, base_std_p = _masked_stats(out.plain.pitch, out.mask)
        _, base_std_e = _masked_stats(out.plain.energy, out.mask)

        stats = [self.speakers[self.speaker_ids[i]] for i in speaker_ids]
        t = lambda xs: torch.tensor(xs, dtype=mean_p.dtype)
        sp_mp, sp_sp = t([s.mean_pitch for s in stats]), t([s.std_pitch for s in stats])
        sp_me, sp_se = t([s.mean_energy for s in stats]), t([s.std_energy for s in stats])

        z_energy = (mean_e - sp_me) / sp_se
        z_pitch = (mean_p - sp_mp) / sp_sp
        z_hand = t([self.motion_z[c.clip_id][0] for c in clips])
        z_face = t([self.motion_z[c.clip_id][1] for c in clips])
        motion_align = losses.motion_align_loss(
            z_energy, z_pitch, z_hand, z_face, tc.weights.margin)

        crops, crop_mask = make_crops(out.mel_list(), tc.crop_frames, self.rng)
        adversarial = losses.adversarial_loss(self.disc(crops, crop_mask))
        intonation = losses.intonation_range_loss(
            std_p, std_e, base_std_p.detach(), base_std_e.detach(),
            tc.ir_direction)
        speaker_range = losses.speaker_range_loss(
            mean_p, mean_e, sp_mp, sp_sp, sp_me, sp_se)

        self._check_finite([
            ("adversarial", adversarial), ("intonation_range", intonation),
            ("speaker_range", speaker_range), ("sign_recon", sign_recon),
            ("motion_align", motion_align), ("gate_weight", gate_weight)])

        w = tc.weights
        active = []
        if tc.use_natural:
            active.append(losses.naturalness_loss(adversarial, intonation,
                                                  speaker_range, w))
        if tc.use_signrec:
            active.append(w.signrec * sign_recon)
        if tc.use_promo:
            active.append(w.promo * motion_align)
        if self._any_toggle:
            active.append(w.weight * gate_weight)
        if active:
            total = sum(active)
            if isinstance(total, torch.Tensor) and total.grad_fn is not None:
                self.opt_g.zero_grad()
                total.backward()
                self.opt_g.step()

        report = LossReport.from_components(
            self.report_weights, adversarial, intonation, speaker_range,
            sign_recon, motion_align, gate_weight,
            include_natural=tc.use_natural)
        return report, float(out.w_sign.detach().mean())

    def discriminator_step(self, real: list[SpeechUtterance],
                           clips: list[KeypointSequence]) -> tuple[float, float]:
        """One optimizer update of the discriminator; fake mels are produced
        without generator gradients. Returns (loss, crop accuracy)."""
        tc = self.cfg.train
        if tc.augment_sign:
            clips = self._augment(clips)
        with torch.no_grad():
            fake_mels = self.forward_full(clips).mel_list()
        real_mels = [torch.tensor(u.mel) for u in real]
        real_crops, real_mask = make_crops(real_mels, tc.crop_frames, self.rng)
        fake_crops, fake_mask = make_crops(fake_mels, tc.crop_frames, self.rng)
        d_real = self.disc(real_crops, real_mask)
        d_fake = self.disc(fake_crops, fake_mask)
        loss = losses.discriminator_loss(d_real, d_fake, tc.disc_convention)
        self._check_finite([("discriminator", loss)])
        self.opt_d.zero_grad()
        loss.backward()
        self.opt_d.step()
        acc = crop_accuracy(d_real.detach(), d_fake.detach(), tc.disc_convention)
        return float(loss.detach()), acc

    # -- loop --------------------------------------------------------------

    def _sample(self, n: int, size: int) -> np.ndarray:
        return self.rng.choice(n, size=size, replace=n < size)

    def run(self, metrics_path: str | Path | None = None,
            checkpoint_dir: str | Path | None = None,
            steps: int | None = None) -> list[dict]:
        """Alternate generator and discriminator steps up to the configured
        total, appending one JSON record per step to the metrics log."""
        tc = self.cfg.train
        end = tc.steps if steps is None else self.step + steps
        records = []
        writer = None
        if metrics_path is not None:
            writer = open(metrics_path, "w" if self.step == 0 else "a")
        try:
            while self.step < end:
                clips = [self.sign_train[i]
                         for i in self._sample(len(self.sign_train), tc.batch_size)]
                speakers = self.rng.integers(0, len(self.speaker_ids),
                                             size=len(clips))
                report, w_sign = self.generator_step(clips, speakers)
                disc_record = None
                if tc.use_natural:
                    real = [self.speech[i]
                            for i in self._sample(len(self.speech), tc.batch_size)]
                    d_clips = [self.sign_train[i]
                               for i in self._sample(len(self.sign_train), tc.batch_size)]
                    d_loss, d_acc = self.discriminator_step(real, d_clips)
                    self.acc_window.append(d_acc)
                    disc_record = {
                        "loss": d_loss,
                        "accuracy": d_acc,
                        "accuracy_avg100": sum(self.acc_window) / len(self.acc_window),
                    }
                self.step += 1
                record = {"step": self.step, "w_sign": w_sign,
                          "gen": report.to_dict(), "disc": disc_record}
                records.append(record)
                if writer is not None:
                    writer.write(json.dumps(record) + "\n")
                    writer.flush()
                if (checkpoint_dir is not None and tc.checkpoint_interval > 0
                        and self.step % tc.checkpoint_interval == 0):
                    ckpt = Path(checkpoint_dir) / f"step_{self.step:06d}.ckpt"
                    self.save(ckpt)
        finally:
            if writer is not None:
                writer.close()
        return records

    # -- inference for evaluation -----------------------------------------

    def synthesize(self, clips: list[KeypointSequence]) -> list[dict]:
        """Full-path synthesis, no gradients; per-clip contour arrays + mel."""
        out_records = []
        with torch.no_grad():
            out = self.forward_full(clips)
            durations = out.mixed.durations(out.mask, self.backbone.cfg.max_duration)
            for i, clip in enumerate(clips):
                n = int(out.mask[i].sum())
                out_records.append({
                    "clip_id": clip.clip_id,
                    "pitch": out.mixed.pitch[i, :n].numpy().astype(np.float64),
                    "energy": out.mixed.energy[i, :n].numpy().astype(np.float64),
                    "durations": durations[i, :n].numpy(),
                    "mel": out.mel[i, :int(out.frame_mask[i].sum())].numpy(),
                    "w_sign": float(out.w_sign[i]),
                })
        return out_records

    def two_stage(self, texts: list[list[int]]) -> list[dict]:
        """Plain-path synthesis for the same texts, as a baseline."""
        out_records = []
        with torch.no_grad():
            ids, mask = collate_text(texts, self.backbone.vocab_size)
            mel, contours, frame_mask = self.backbone.two_stage(ids, mask)
            durations = contours.durations(mask, self.backbone.cfg.max_duration)
            for i in range(len(texts)):
                n = int(mask[i].sum())
                out_records.append({
                    "pitch": contours.pitch[i, :n].numpy().astype(np.float64),
                    "energy": contours.energy[i, :n].numpy().astype(np.float64),
                    "durations": durations[i, :n].numpy(),
                    "mel": mel[i, :int(frame_mask[i].sum())].numpy(),
                })
        return out_records

    # -- persistence -------------------------------------------------------

    def _optimizer_tensors(self, opt, prefix: str, tensors: dict):
        params = [p for group in opt.param_groups for p in group["params"]]
        for idx, p in enumerate(params):
            state = opt.state.get(p)
            if not state:
                continue
            tensors[f"{prefix}.{idx}.step"] = np.asarray(
                [float(state["step"])], dtype=np.float32)
            tensors[f"{prefix}.{idx}.exp_avg"] = state["exp_avg"].numpy()
            tensors[f"{prefix}.{idx}.exp_avg_sq"] = state["exp_avg_sq"].numpy()

    def _restore_optimizer(self, opt, prefix: str, tensors: dict):
        params = [p for group in opt.param_groups for p in group["params"]]
        for idx, p in enumerate(params):
            key = f"{prefix}.{idx}.step"
            if key not in tensors:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(tensors[key][0])),
                "exp_avg": torch.from_numpy(tensors[f"{prefix}.{idx}.exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}.{idx}.exp_avg_sq"].copy()),
            }

    def save(self, path: str | Path):
        header = {
            "kind": "train_state",
            "step": self.step,
            "config_hash": self.cfg.config_hash(),
            "rng_state": self.rng.bit_generator.state,
            "acc_window": list(self.acc_window),
            "backbone_config": self.backbone.cfg.to_dict(),
            "vocab_size": self.backbone.vocab_size,
            "mel_bins": self.backbone.mel_bins,
        }
        tensors = {}
        for prefix, module in (("backbone", self.backbone),
                               ("branch", self.branch), ("disc", self.disc)):
            for k, v in module.state_dict().items():
                tensors[f"{prefix}.{k}"] = v.detach().cpu().numpy()
        self._optimizer_tensors(self.opt_g, "opt_g", tensors)
        self._optimizer_tensors(self.opt_d, "opt_d", tensors)
        serial.save_checkpoint(path, header, tensors)

    @classmethod
    def resume(cls, path: str | Path, cfg: RunConfig,
               sign_clips: list[KeypointSequence], speech: list[SpeechUtterance],
               backbone: AcousticBackbone) -> "Trainer":
        """Rebuild a trainer from a checkpoint; refuses config mismatches."""
        header, tensors = serial.load_checkpoint(path)
        if header.get("kind") != "train_state":
            raise CheckpointMismatchError(f"{path}: not a training checkpoint")
        if header.get("config_hash") != cfg.config_hash():
            raise CheckpointMismatchError(
                f"{path}: checkpoint config hash {header.get('config_hash')} "
                f"does not match the provided config {cfg.config_hash()}")
        trainer = cls(cfg, sign_clips, speech, backbone)
        for prefix, module in (("backbone", trainer.backbone),
                               ("branch", trainer.branch), ("disc", trainer.disc)):
            state = {k[len(prefix) + 1:]: torch.from_numpy(v.copy())
                     for k, v in tensors.items()
                     if k.startswith(prefix + ".") and not k.startswith("opt_")}
            module.load_state_dict(state, strict=True)
        trainer._restore_optimizer(trainer.opt_g, "opt_g", tensors)
        trainer._restore_optimizer(trainer.opt_d, "opt_d", tensors)
        trainer.rng.bit_generator.state = header["rng_state"]
        trainer.step = int(header["step"])
        trainer.acc_window = deque(header.get("acc_window", []), maxlen=100)
        return trainer


def build_trainer(cfg: RunConfig, base_dir: str | Path = ".") -> Trainer:
    """Load corpora and the backbone named by the config, then construct."""
    from .corpus import read_sign_corpus, read_speech_corpus
    base = Path(base_dir)
    tc = cfg.train
    for name, rel in (("sign corpus", tc.sign_corpus),
                      ("speech corpus", tc.speech_corpus),
                      ("backbone checkpoint", tc.backbone_checkpoint)):
        if not (base / rel).exists():
            raise ContractError(f"{name} not found at {base / rel}")
    sign = read_sign_corpus(base / tc.sign_corpus)
    speech = read_speech_corpus(base / tc.speech_corpus)
    backbone, _ = load_backbone(base / tc.backbone_checkpoint)
    return Trainer(cfg, sign, speech, backbone)
