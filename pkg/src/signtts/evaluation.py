"""Expressiveness metrics, the ablation harness, arousal-contrast
analysis, and report/plot emission.

Expressiveness is the population standard deviation of predicted contour
values, in two variants: pooled over every value in the test set, and
the mean of per-sample standard deviations (samples shorter than two
values are excluded from that mean). Contours are in normalized [0, 1]
units, so comparisons between systems are directional, not absolute.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.stats import mannwhitneyu

from .config import RunConfig
from .corpus import KeypointSequence, SpeechUtterance, gen_probe_clips
from .errors import StatsError
from .trainer import Trainer

REPORT_SCHEMA = "EVAL1"

_SYNTH_CHUNK = 16


@dataclass(frozen=True)
class ExpressivenessReport:
    dataset_std_pitch: float
    dataset_std_energy: float
    mean_per_sample_std_pitch: float
    mean_per_sample_std_energy: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "dataset_std_pitch": self.dataset_std_pitch,
            "dataset_std_energy": self.dataset_std_energy,
            "mean_per_sample_std_pitch": self.mean_per_sample_std_pitch,
            "mean_per_sample_std_energy": self.mean_per_sample_std_energy,
            "n_samples": self.n_samples,
        }


def expressiveness(contour_sets: list[dict]) -> ExpressivenessReport:
    """Pooled and per-sample-mean contour spread over synthesized samples.

    Each item carries "pitch" and "energy" arrays (one value per phoneme).
    """
    if not contour_sets:
        raise StatsError("no samples to evaluate")
    out = {}
    for channel in ("pitch", "energy"):
        values = [np.asarray(c[channel], dtype=np.float64) for c in contour_sets]
        pooled = np.concatenate(values)
        if pooled.size == 0:
            raise StatsError(f"no {channel} values to evaluate")
        per_sample = [float(v.std()) for v in values if v.size >= 2]
        out[channel] = (float(pooled.std()),
                        float(np.mean(per_sample)) if per_sample else 0.0)
    return ExpressivenessReport(
        dataset_std_pitch=out["pitch"][0], dataset_std_energy=out["energy"][0],
        mean_per_sample_std_pitch=out["pitch"][1],
        mean_per_sample_std_energy=out["energy"][1],
        n_samples=len(contour_sets))


def synthesize_test_set(trainer: Trainer,
                        clips: list[KeypointSequence] | None = None) -> list[dict]:
    """Full-path synthesis over the trainer's test split, in fixed chunks."""
    clips = trainer.sign_test if clips is None else clips
    records = []
    for i in range(0, len(clips), _SYNTH_CHUNK):
        records.extend(trainer.synthesize(clips[i:i + _SYNTH_CHUNK]))
    return records


def two_stage_test_set(trainer: Trainer,
                       clips: list[KeypointSequence] | None = None) -> list[dict]:
    """Plain-path synthesis for the same texts."""
    clips = trainer.sign_test if clips is None else clips
    records = []
    for i in range(0, len(clips), _SYNTH_CHUNK):
        records.extend(trainer.two_stage([c.text for c in clips[i:i + _SYNTH_CHUNK]]))
    return records


def identity_check(trainer: Trainer, clips: list[KeypointSequence]) -> dict:
    """Compare full-path and plain-path mels on the same texts.

    With the mixer's output projections still at zero this must be an
    exact (bitwise) match for every pair.
    """
    full = synthesize_test_set(trainer, clips)
    plain = two_stage_test_set(trainer, clips)
    max_diff = 0.0
    equal = True
    for f, p in zip(full, plain):
        if f["mel"].shape != p["mel"].shape:
            equal = False
            max_diff = float("inf")
            continue
        if not np.array_equal(f["mel"], p["mel"]):
            equal = False
            max_diff = max(max_diff, float(np.abs(f["mel"] - p["mel"]).max()))
    return {"n_pairs": len(full), "bitwise_equal": equal, "max_abs_diff": max_diff}


# ---------------------------------------------------------------------------
# arousal contrast
# ---------------------------------------------------------------------------

def per_sample_stds(records: list[dict], channel: str) -> list[float]:
    return [float(np.asarray(r[channel], dtype=np.float64).std())
            for r in records if np.asarray(r[channel]).size >= 2]


def contrast_stats(high: list[float], low: list[float]) -> dict:
    """Group means, their difference, and a one-sided rank-sum test that
    the high group stochastically dominates."""
    if not high or not low:
        raise StatsError("empty contrast group")
    u, p = mannwhitneyu(high, low, alternative="greater")
    return {
        "high_mean": float(np.mean(high)),
        "low_mean": float(np.mean(low)),
        "diff": float(np.mean(high) - np.mean(low)),
        "u_statistic": float(u),
        "p_value": float(p),
    }


def arousal_contrast(trainer: Trainer,
                     clips: list[KeypointSequence] | None = None,
                     min_group_size: int = 10) -> dict:
    """Median-split the given clips by arousal and compare per-sample
    contour spread between the groups."""
    clips = trainer.sign_test if clips is None else clips
    arousals = np.array([c.arousal for c in clips])
    median = float(np.median(arousals))
    high = [c for c, a in zip(clips, arousals) if a > median]
    low = [c for c, a in zip(clips, arousals) if a <= median]
    if len(high) < min_group_size or len(low) < min_group_size:
        raise StatsError(
            f"need {min_group_size} clips per arousal group, got "
            f"{len(high)} high / {len(low)} low")
    high_rec = synthesize_test_set(trainer, high)
    low_rec = synthesize_test_set(trainer, low)
    report = {"median_arousal": median, "n_high": len(high), "n_low": len(low)}
    for channel in ("pitch", "energy"):
        report[channel] = contrast_stats(per_sample_stds(high_rec, channel),
                                         per_sample_stds(low_rec, channel))
    return report


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

ABLATION_ROWS = (
    ("two_stage", (False, False, False)),
    ("natural", (True, False, False)),
    ("natural+signrec", (True, True, False)),
    ("natural+promo", (True, False, True)),
    ("full", (True, True, True)),
)


@dataclass(frozen=True)
class AblationRow:
    name: str
    use_natural: bool
    use_signrec: bool
    use_promo: bool
    report: ExpressivenessReport
    final_losses: dict | None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "use_natural": self.use_natural,
            "use_signrec": self.use_signrec,
            "use_promo": self.use_promo,
            "expressiveness": self.report.to_dict(),
            "final_losses": self.final_losses,
        }


def ablation_suite(cfg: RunConfig, sign_clips: list[KeypointSequence],
                   speech: list[SpeechUtterance], backbone) -> list[AblationRow]:
    """Train one model per toggle triple with a shared seed and measure
    test-split expressiveness for each."""
    rows = []
    for name, (nat, rec, pro) in ABLATION_ROWS:
        row_cfg = replace(cfg, train=replace(
            cfg.train, use_natural=nat, use_signrec=rec, use_promo=pro))
        trainer = Trainer(row_cfg, sign_clips, speech, backbone)
        records = trainer.run()
        report = expressiveness(synthesize_test_set(trainer))
        rows.append(AblationRow(
            name=name, use_natural=nat, use_signrec=rec, use_promo=pro,
            report=report,
            final_losses=records[-1]["gen"] if records else None))
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    header = (f"{'method':<16} {'natural':>7} {'signrec':>7} {'promo':>5} "
              f"{'pitch_std':>9} {'energy_std':>10} {'pitch_ps':>9} {'energy_ps':>9}")
    lines = [header, "-" * len(header)]
    for r in rows:
        mark = lambda b: "x" if b else "-"
        lines.append(
            f"{r.name:<16} {mark(r.use_natural):>7} {mark(r.use_signrec):>7} "
            f"{mark(r.use_promo):>5} {r.report.dataset_std_pitch:>9.4f} "
            f"{r.report.dataset_std_energy:>10.4f} "
            f"{r.report.mean_per_sample_std_pitch:>9.4f} "
            f"{r.report.mean_per_sample_std_energy:>9.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# reports and plots
# ---------------------------------------------------------------------------

def full_report(trainer: Trainer, cfg: RunConfig) -> dict:
    """The standard post-training evaluation bundle.

    The arousal contrast is measured over freshly drawn held-out clips
    rather than the test split, so the rank-sum comparison is powered by
    ``cfg.eval.contrast_clips`` instead of the corpus size.
    """
    full_rec = synthesize_test_set(trainer)
    plain_rec = two_stage_test_set(trainer)
    probe = gen_probe_clips(cfg.eval.contrast_clips, cfg.corpus.seed,
                            cfg.corpus, cfg.eval.contrast_index_offset)
    return {
        "schema": REPORT_SCHEMA,
        "config_hash": cfg.config_hash(),
        "step": trainer.step,
        "n_test_clips": len(trainer.sign_test),
        "expressiveness": {
            "full": expressiveness(full_rec).to_dict(),
            "two_stage": expressiveness(plain_rec).to_dict(),
        },
        "mean_w_sign": float(np.mean([r["w_sign"] for r in full_rec])),
        "arousal_contrast": arousal_contrast(
            trainer, probe, min_group_size=cfg.eval.min_group_size),
    }


def write_report(report: dict, path: str | Path):
    if report.get("schema") != REPORT_SCHEMA:
        report = {"schema": REPORT_SCHEMA, **report}
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: str | Path) -> dict:
    with open(path) as f:
        return json.load(f)


def build_clip_figure(full: dict, baseline: dict):
    """Mel heatmap plus contour overlays (full path vs plain path)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mel = np.asarray(full["mel"], dtype=np.float64)
    K, B = mel.shape
    fig, (ax_mel, ax_pitch, ax_energy) = plt.subplots(3, 1, figsize=(8, 7))
    ax_mel.imshow(mel.T, origin="lower", aspect="auto", extent=(0, K, 0, B))
    ax_mel.set_xlabel("frame")
    ax_mel.set_ylabel("mel bin")
    ax_mel.set_title(full.get("clip_id", "clip"))
    for ax, channel in ((ax_pitch, "pitch"), (ax_energy, "energy")):
        ax.plot(np.asarray(full[channel]), label="sign-conditioned")
        ax.plot(np.asarray(baseline[channel]), label="plain path", linestyle="--")
        ax.set_ylabel(channel)
        ax.set_ylim(-0.05, 1.05)
        ax.legend(loc="upper right", fontsize=8)
    ax_energy.set_xlabel("phoneme")
    fig.tight_layout()
    return fig


def plot_clips(trainer: Trainer, out_dir: str | Path,
               n_clips: int = 2) -> list[Path]:
    """Render comparison figures for the first test clips; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = trainer.sign_test[:n_clips]
    if not clips:
        raise StatsError("no test clips to plot")
    full = synthesize_test_set(trainer, clips)
    plain = two_stage_test_set(trainer, clips)
    paths = []
    for clip, f, p in zip(clips, full, plain):
        fig = build_clip_figure(f, p)
        path = out_dir / f"{clip.clip_id}.png"
        fig.savefig(path, dpi=100)
        import matplotlib.pyplot as plt
        plt.close(fig)
        paths.append(path)
    return paths
