"""Seeded synthetic subjects and sessions with known latent trust.

The generator builds a ten-block pyramid (4-3-2-1 layers) whose placement
skews widen with task difficulty, drives a latent trust recurrence from
the accumulated failure risk, and renders four physiological channels
whose statistics shift monotonically with trust. Because the latent
trajectory is written out as the questionnaire labels, the full pipeline
has an exact ground-truth oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cp import DEFAULT_GAMMA, block_skew, failure_risk_step
from .errors import ValidationError
from .session import (
    DIFFICULTIES,
    NOMINAL_RATES,
    BlockPlacement,
    ChannelKind,
    LabelEntry,
    LabelTrack,
    Session,
    SignalChannel,
    save_session,
)

logger = logging.getLogger(__name__)

# Latent trust recurrence: attractor per difficulty, risk and collapse
# penalties, neutral starting value.
TRUST_BASE = {"LD": 1.8, "MD": 4.3, "HD": 6.5}
TRUST_ALPHA = 2.0
TRUST_BETA = 3.0
TRUST_START = 4.0
TRUST_MIN, TRUST_MAX = 1.0, 7.0

# Placement skew spread per difficulty (normalized block widths).
SKEW_SIGMA = {"LD": 0.02, "MD": 0.05, "HD": 0.10}

# Pyramid layout: (layer, ideal x, indices of supporting blocks).
PYRAMID = (
    (1, 0.0, ()),
    (1, 1.0, ()),
    (1, 2.0, ()),
    (1, 3.0, ()),
    (2, 0.5, (0, 1)),
    (2, 1.5, (1, 2)),
    (2, 2.5, (2, 3)),
    (3, 1.0, (4, 5)),
    (3, 2.0, (5, 6)),
    (4, 1.5, (7, 8)),
)

# GSR phasic bump shape.
SCR_RISE_MS = 300.0
SCR_DECAY_MS = 2500.0


@dataclass(frozen=True)
class SubjectParams:
    """Per-subject physiological response parameters."""

    base_hr_bpm: float
    hr_trust_gain: float
    gsr_tonic: float
    gsr_drift_amp: float
    scr_rate_gain: float
    emg_amp: float
    noise_sd: dict
    trust_inertia: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.trust_inertia < 1.0:
            raise ValidationError(
                f"trust_inertia must lie in (0, 1), got {self.trust_inertia}"
            )


@dataclass(frozen=True)
class SimConfig:
    """Task-level knobs for session generation."""

    n_blocks: int = 10
    step_period_ms: tuple = (4000, 6000)
    post_task_ms: int = 15000
    collapse_threshold: float = 1.5
    gamma: float = DEFAULT_GAMMA


@dataclass(frozen=True)
class StepRecord:
    """Per-step construction outcome fed into the trust recurrence."""

    step_index: int
    timestamp_ms: int
    risk: float
    collapsed: bool


@dataclass(frozen=True)
class LatentTrustTrajectory:
    """Latent trust sampled at placement times, held constant in between."""

    samples: tuple  # of (timestamp_ms, trust)

    def value_at(self, t_ms: float) -> float:
        if not self.samples:
            raise ValidationError("empty trust trajectory")
        value = self.samples[0][1]
        for ts, trust in self.samples:
            if ts <= t_ms:
                value = trust
            else:
                break
        return value

    def values_at(self, t_ms: np.ndarray) -> np.ndarray:
        ts = np.array([s[0] for s in self.samples], dtype=np.float64)
        vals = np.array([s[1] for s in self.samples], dtype=np.float64)
        idx = np.clip(np.searchsorted(ts, t_ms, side="right") - 1, 0, len(ts) - 1)
        return vals[idx]


def sample_subject(seed: int) -> SubjectParams:
    """Draw subject parameters from fixed uniform ranges, deterministically."""
    rng = np.random.default_rng(seed)
    return SubjectParams(
        base_hr_bpm=float(rng.uniform(55.0, 80.0)),
        hr_trust_gain=float(rng.uniform(2.0, 4.0)),
        gsr_tonic=float(rng.uniform(4.0, 8.0)),
        gsr_drift_amp=float(rng.uniform(0.05, 0.15)),
        scr_rate_gain=float(rng.uniform(0.8, 1.6)),
        emg_amp=float(rng.uniform(0.5, 1.5)),
        noise_sd={
            "ecg": float(rng.uniform(0.05, 0.12)),
            "gsr": float(rng.uniform(0.02, 0.05)),
            "emg_left": 0.0,
            "emg_right": 0.0,
        },
        trust_inertia=float(rng.uniform(0.35, 0.55)),
        seed=int(seed),
    )


def simulate_construction(
    difficulty: str, rng: np.random.Generator, cfg: Optional[SimConfig] = None
) -> tuple:
    """Place pyramid blocks with difficulty-scaled skews.

    Returns (placements, step_records). Stops early, flagging the last
    placement, when the accumulated risk crosses the collapse threshold.
    """
    if difficulty not in DIFFICULTIES:
        raise ValidationError(f"unknown difficulty {difficulty!r}")
    cfg = cfg or SimConfig()
    sigma = SKEW_SIGMA[difficulty]
    lo, hi = cfg.step_period_ms

    placements = []
    records = []
    placed_x = []
    t = 0
    prev_risk = 0.0
    for i in range(min(cfg.n_blocks, len(PYRAMID))):
        layer, ideal_x, support_idx = PYRAMID[i]
        t += int(rng.integers(lo, hi))
        x = float(ideal_x + rng.normal(0.0, sigma))
        supports = tuple(placed_x[j] for j in support_idx)
        p = BlockPlacement(
            step_index=i + 1,
            layer=layer,
            x_center=x,
            support_centers=supports,
            timestamp_ms=t,
        )
        risk = failure_risk_step(prev_risk, block_skew(p), cfg.gamma)
        collapsed = risk > cfg.collapse_threshold
        if collapsed:
            p = replace(p, collapsed_after=True)
        placements.append(p)
        placed_x.append(x)
        records.append(
            StepRecord(step_index=i + 1, timestamp_ms=t, risk=risk, collapsed=collapsed)
        )
        prev_risk = risk
        if collapsed:
            break
    return placements, records


def trust_dynamics(
    cp_history: Sequence[StepRecord], difficulty: str, params: SubjectParams
) -> LatentTrustTrajectory:
    """Latent trust recurrence driven by per-step risk and collapse.

    trust_{k} = inertia * trust_{k-1}
              + (1 - inertia) * (base - alpha * max(risk_k, 0) - beta * collapsed_k),
    clamped to the questionnaire scale.
    """
    if difficulty not in DIFFICULTIES:
        raise ValidationError(f"unknown difficulty {difficulty!r}")
    base = TRUST_BASE[difficulty]
    inertia = params.trust_inertia
    trust = TRUST_START
    samples = []
    for rec in cp_history:
        target = base - TRUST_ALPHA * max(rec.risk, 0.0) - TRUST_BETA * float(rec.collapsed)
        trust = inertia * trust + (1.0 - inertia) * target
        trust = min(TRUST_MAX, max(TRUST_MIN, trust))
        samples.append((rec.timestamp_ms, trust))
    return LatentTrustTrajectory(samples=tuple(samples))


def _heart_rate(trust: float, params: SubjectParams) -> float:
    return params.base_hr_bpm + params.hr_trust_gain * (4.0 - trust)


def _synth_ecg(
    trajectory: LatentTrustTrajectory,
    params: SubjectParams,
    duration_ms: int,
    rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration_ms * rate / 1000.0))
    sig = np.zeros(n, dtype=np.float64)
    t = 0.0
    while t < duration_ms:
        idx = int(round(t * rate / 1000.0))
        if idx < n:
            sig[idx] += 1.0
        rr = 60000.0 / _heart_rate(trajectory.value_at(t), params)
        t += rr
    sd = params.noise_sd.get("ecg", 0.0)
    if sd > 0:
        sig += rng.normal(0.0, sd, size=n)
    return sig


def _scr_kernel(t_ms: np.ndarray) -> np.ndarray:
    # Smooth rise-then-decay, nonnegative everywhere.
    return (1.0 - np.exp(-t_ms / SCR_RISE_MS)) * np.exp(-t_ms / SCR_DECAY_MS)


def _synth_gsr(
    trajectory: LatentTrustTrajectory,
    params: SubjectParams,
    duration_ms: int,
    rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration_ms * rate / 1000.0))
    t_axis = np.arange(n) * 1000.0 / rate
    # Slow nonnegative drift so the tonic level is a floor, not a mean.
    drift = params.gsr_drift_amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * t_axis / duration_ms))
    sig = params.gsr_tonic + drift

    # Phasic bumps arrive as a Poisson process whose rate falls with trust.
    t = 0.0
    while t < duration_ms:
        trust = trajectory.value_at(t)
        rate_per_ms = params.scr_rate_gain * max(8.0 - trust, 0.0) / 60000.0
        if rate_per_ms <= 0:
            break
        t += rng.exponential(1.0 / rate_per_ms)
        if t >= duration_ms:
            break
        amp = rng.uniform(0.3, 0.8)
        start = int(np.ceil(t * rate / 1000.0))
        if start < n:
            sig[start:] += amp * _scr_kernel(t_axis[start:] - t)
    sd = params.noise_sd.get("gsr", 0.0)
    if sd > 0:
        sig += rng.normal(0.0, sd, size=n)
    return sig


def emg_noise_sd(trust: float, params: SubjectParams) -> float:
    """EMG amplitude law: tension (and so variance) rises as trust falls."""
    return params.emg_amp * (1.0 + 0.2 * (7.0 - trust))


def _synth_emg(
    trajectory: LatentTrustTrajectory,
    params: SubjectParams,
    duration_ms: int,
    rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration_ms * rate / 1000.0))
    t_axis = np.arange(n) * 1000.0 / rate
    sd = params.emg_amp * (1.0 + 0.2 * (7.0 - trajectory.values_at(t_axis)))
    return rng.normal(0.0, 1.0, size=n) * sd


def synth_signals(
    trajectory: LatentTrustTrajectory,
    params: SubjectParams,
    duration_ms: int,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Render the four channels over ``duration_ms`` at nominal rates."""
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    makers = {
        ChannelKind.ECG: _synth_ecg,
        ChannelKind.GSR: _synth_gsr,
        ChannelKind.EMG_LEFT: _synth_emg,
        ChannelKind.EMG_RIGHT: _synth_emg,
    }
    channels = {}
    for kind, make in makers.items():
        rate = NOMINAL_RATES[kind]
        samples = make(trajectory, params, duration_ms, rate, rng)
        channels[kind] = SignalChannel(
            kind=kind, sample_rate_hz=rate, samples=samples, t0_ms=0
        )
    return channels


def build_session(
    params: SubjectParams,
    difficulty: str,
    seed: int,
    cfg: Optional[SimConfig] = None,
) -> Session:
    """Simulate one task end to end and return it as an in-memory session."""
    cfg = cfg or SimConfig()
    seq = np.random.SeedSequence(entropy=seed)
    rng_task, rng_signal, rng_label = (np.random.default_rng(s) for s in seq.spawn(3))

    placements, records = simulate_construction(difficulty, rng_task, cfg)
    trajectory = trust_dynamics(records, difficulty, params)

    duration_ms = placements[-1].timestamp_ms + cfg.post_task_ms
    channels = synth_signals(trajectory, params, duration_ms, rng_signal)

    load_base = {"LD": 2.5, "MD": 4.0, "HD": 5.5}[difficulty]
    entries = []
    for (ts, trust), rec in zip(trajectory.samples, records):
        nasa = float(
            np.clip(load_base + rng_label.normal(0.0, 0.3), TRUST_MIN, TRUST_MAX)
        )
        entries.append(
            LabelEntry(
                step_index=rec.step_index,
                timestamp_ms=ts,
                muir_mean=float(trust),
                nasa_tlx_mean=nasa,
            )
        )

    return Session(
        subject_id=f"subj{params.seed:04d}",
        difficulty=difficulty,
        channels=channels,
        placements=tuple(placements),
        labels=LabelTrack(tuple(entries)),
        t0_ms=0,
    )


def simulate_task(
    params: SubjectParams,
    difficulty: str,
    seed: int,
    out_dir,
    cfg: Optional[SimConfig] = None,
) -> Path:
    """Simulate one task and write it as a session directory."""
    session = build_session(params, difficulty, seed, cfg)
    out = Path(out_dir) / f"{session.subject_id}_{difficulty}"
    save_session(session, out)
    logger.info(
        "wrote %s: %d placements, %.1f s%s",
        out,
        len(session.placements),
        session.span_end_ms / 1000.0,
        " (collapsed)" if session.placements[-1].collapsed_after else "",
    )
    return out


def generate_sessions(
    n_subjects: int,
    seed: int,
    difficulties: Sequence[str] = DIFFICULTIES,
    cfg: Optional[SimConfig] = None,
) -> list:
    """In-memory sessions for ``n_subjects``, one per subject x difficulty."""
    sessions = []
    for i in range(n_subjects):
        subject_seed = seed + i
        params = sample_subject(subject_seed)
        for j, diff in enumerate(difficulties):
            task_seed = 7919 * subject_seed + j
            sessions.append(build_session(params, diff, task_seed, cfg))
    return sessions


def generate_dataset_dirs(
    n_subjects: int,
    seed: int,
    out_dir,
    difficulties: Sequence[str] = DIFFICULTIES,
    cfg: Optional[SimConfig] = None,
) -> list:
    """Write one session directory per subject x difficulty under ``out_dir``."""
    paths = []
    for i in range(n_subjects):
        subject_seed = seed + i
        params = sample_subject(subject_seed)
        for j, diff in enumerate(difficulties):
            task_seed = 7919 * subject_seed + j
            paths.append(simulate_task(params, diff, task_seed, out_dir, cfg))
    return paths
