"""Differential windowing of sessions into end-aligned analysis frames.

ECG/GSR use long windows, EMG uses short ones, and all window families
advance on the same hop so their end times line up on shared grids. A
frame bundles, at one grid end time: the ECG/GSR slices ending there,
every complete EMG window ending inside the frame span, the risk vector
as of that time, and the step-held questionnaire labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

from .cp import DEFAULT_GAMMA, FailureRiskVector, failure_risk_vector
from .errors import ConfigError, NotEnoughSamples, ValidationError
from .session import ChannelKind, LabelEntry, LabelTrack, Session, SignalChannel


class Label3(Enum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


@dataclass(frozen=True)
class WindowingConfig:
    """Window lengths and the shared hop, all in milliseconds."""

    ecg_gsr_window_ms: int = 3000
    emg_window_ms: int = 216
    hop_ms: int = 108

    def __post_init__(self):
        if self.hop_ms <= 0:
            raise ConfigError(f"hop_ms must be positive, got {self.hop_ms}")
        if self.emg_window_ms > self.ecg_gsr_window_ms:
            raise ConfigError("emg_window_ms must not exceed ecg_gsr_window_ms")

    def emg_grid_count(self) -> int:
        """Steady-state number of EMG windows inside one frame span."""
        return self.ecg_gsr_window_ms // self.hop_ms


@dataclass(frozen=True)
class AnalysisFrame:
    """All modality windows plus risk vector and labels at one end time."""

    end_ms: int
    ecg: np.ndarray
    gsr: np.ndarray
    emg_left: np.ndarray
    emg_right: np.ndarray
    cp: FailureRiskVector
    muir_mean: float
    label7: int
    label3: Label3
    step_index: int
    window_ms: int = 3000

    def __post_init__(self):
        if self.ecg.shape != self.gsr.shape:
            raise ValidationError(
                f"ECG/GSR slice lengths differ: {self.ecg.shape} vs {self.gsr.shape}"
            )

    @property
    def start_ms(self) -> int:
        return self.end_ms - self.window_ms


def window_sample_count(sample_rate_hz: float, window_ms: int) -> int:
    """Number of samples a window of ``window_ms`` spans at this rate."""
    return int(round(window_ms * sample_rate_hz / 1000.0))


def end_sample_index(channel: SignalChannel, end_ms: int) -> int:
    """Exclusive sample index corresponding to ``end_ms`` on this channel."""
    return math.floor((end_ms - channel.t0_ms) * channel.sample_rate_hz / 1000.0)


def window_slice(channel: SignalChannel, end_ms: int, window_ms: int) -> np.ndarray:
    """The last W samples ending at ``end_ms`` (a view, not a copy)."""
    w = window_sample_count(channel.sample_rate_hz, window_ms)
    end = end_sample_index(channel, end_ms)
    if end > channel.n_samples:
        raise NotEnoughSamples(
            f"{channel.kind.value}: window ending at {end_ms} ms reaches past "
            f"the recording ({end} > {channel.n_samples} samples)"
        )
    if end - w < 0:
        raise NotEnoughSamples(
            f"{channel.kind.value}: only {end} samples recorded before {end_ms} ms, "
            f"need {w}"
        )
    return channel.samples[end - w : end]


def label_from_muir(muir_mean: float) -> tuple[int, Label3]:
    """Map a raw questionnaire mean to (7-level label, 3-level label).

    The 7-level label rounds half-up and clamps to 1..7; the 3-level
    label bins the raw mean at 3 and 5.
    """
    if not 1.0 <= muir_mean <= 7.0:
        raise ValidationError(f"muir_mean {muir_mean} outside [1, 7]")
    label7 = min(7, max(1, math.floor(muir_mean + 0.5)))
    if muir_mean < 3.0:
        label3 = Label3.LOW
    elif muir_mean < 5.0:
        label3 = Label3.MEDIUM
    else:
        label3 = Label3.HIGH
    return label7, label3


def label_entry_for(track: LabelTrack, end_ms: int) -> LabelEntry:
    """Most recent entry at or before ``end_ms``; the first entry before that."""
    if not track.entries:
        raise ValidationError("label track is empty")
    chosen = track.entries[0]
    for e in track.entries:
        if e.timestamp_ms <= end_ms:
            chosen = e
        else:
            break
    return chosen


def attach_labels(frames: Sequence[AnalysisFrame], track: LabelTrack) -> list:
    """Re-label frames from ``track`` using the step-hold rule."""
    out = []
    for fr in frames:
        e = label_entry_for(track, fr.end_ms)
        label7, label3 = label_from_muir(e.muir_mean)
        out.append(
            AnalysisFrame(
                end_ms=fr.end_ms,
                ecg=fr.ecg,
                gsr=fr.gsr,
                emg_left=fr.emg_left,
                emg_right=fr.emg_right,
                cp=fr.cp,
                muir_mean=e.muir_mean,
                label7=label7,
                label3=label3,
                step_index=e.step_index,
                window_ms=fr.window_ms,
            )
        )
    return out


def emg_window_ends(
    t0_ms: int, end_ms: int, cfg: WindowingConfig
) -> list:
    """EMG window end times inside the frame span ending at ``end_ms``.

    EMG windows live on their own hop grid starting at the earliest
    complete window (t0 + emg_window_ms); a frame collects the grid times
    in (end - ecg_gsr_window_ms, end].
    """
    we, h, wc = cfg.emg_window_ms, cfg.hop_ms, cfg.ecg_gsr_window_ms
    m_hi = (end_ms - t0_ms - we) // h
    m_lo = max(0, (end_ms - wc - t0_ms - we) // h + 1)
    return [t0_ms + we + h * m for m in range(m_lo, m_hi + 1)]


def _build_frame(
    session: Session, end_ms: int, cfg: WindowingConfig, gamma: float
) -> AnalysisFrame:
    ecg = window_slice(session.channel(ChannelKind.ECG), end_ms, cfg.ecg_gsr_window_ms)
    gsr = window_slice(session.channel(ChannelKind.GSR), end_ms, cfg.ecg_gsr_window_ms)

    ends = emg_window_ends(session.t0_ms, end_ms, cfg)
    emg = {}
    for kind in (ChannelKind.EMG_LEFT, ChannelKind.EMG_RIGHT):
        ch = session.channel(kind)
        w = window_sample_count(ch.sample_rate_hz, cfg.emg_window_ms)
        if ends:
            emg[kind] = np.stack(
                [window_slice(ch, e, cfg.emg_window_ms) for e in ends]
            )
        else:
            emg[kind] = np.zeros((0, w), dtype=np.float64)

    risk = failure_risk_vector(session.placements, upto_ms=end_ms, gamma=gamma)
    entry = label_entry_for(session.labels, end_ms)
    label7, label3 = label_from_muir(entry.muir_mean)
    return AnalysisFrame(
        end_ms=end_ms,
        ecg=ecg,
        gsr=gsr,
        emg_left=emg[ChannelKind.EMG_LEFT],
        emg_right=emg[ChannelKind.EMG_RIGHT],
        cp=risk,
        muir_mean=entry.muir_mean,
        label7=label7,
        label3=label3,
        step_index=entry.step_index,
        window_ms=cfg.ecg_gsr_window_ms,
    )


def frame_end_times(session: Session, cfg: Optional[WindowingConfig] = None) -> list:
    """All frame end times: t0 + window, stepping by hop, within the span."""
    cfg = cfg or WindowingConfig()
    ends = []
    end = session.t0_ms + cfg.ecg_gsr_window_ms
    span_end = session.span_end_ms
    while end <= span_end:
        ends.append(end)
        end += cfg.hop_ms
    return ends


def frame_stream(
    session: Session,
    cfg: Optional[WindowingConfig] = None,
    gamma: float = DEFAULT_GAMMA,
) -> Iterator[AnalysisFrame]:
    """Yield every analysis frame of a session in time order.

    Empty if the recording is shorter than one ECG/GSR window. Frames
    require a non-empty label track.
    """
    cfg = cfg or WindowingConfig()
    for end in frame_end_times(session, cfg):
        yield _build_frame(session, end, cfg, gamma)
