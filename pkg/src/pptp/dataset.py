"""Bridge from analysis frames to dense training arrays.

Frames are materialized per session, optionally strided to thin the
heavily overlapping hop grid, and stacked into flat arrays. Each frame
keeps its originating step interval so splits can hold out whole steps
and drop frames whose spans leak across the split boundary.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import SplitError, ValidationError
from .model import pad_emg_windows
from .session import Session
from .windows import WindowingConfig, frame_stream

logger = logging.getLogger(__name__)

SIGNAL_NAMES = ("ECG", "GSR", "EMG")


@dataclass
class FrameArrays:
    """Stacked frame tensors plus the bookkeeping needed for splitting."""

    ecg: np.ndarray  # [N, S]
    gsr: np.ndarray  # [N, S]
    emg: np.ndarray  # [N, 2, K, W]
    cp: np.ndarray  # [N, 10]
    muir: np.ndarray  # [N]
    y3: np.ndarray  # [N] class ids 0..2
    y7: np.ndarray  # [N] class ids 0..6
    step_index: np.ndarray  # [N] originating placement step (split unit)
    step_key: np.ndarray  # [N] per-session step interval id
    session_idx: np.ndarray  # [N] originating session index
    span_lo: np.ndarray  # [N] frame span start (ms)
    span_hi: np.ndarray  # [N] frame span end (ms)
    subject_id: list  # [N]
    step_intervals: dict  # step key -> (session_idx, lo, hi) half-open

    @property
    def n(self) -> int:
        return int(self.ecg.shape[0])

    def labels(self, n_classes: int) -> np.ndarray:
        if n_classes == 3:
            return self.y3
        if n_classes == 7:
            return self.y7
        raise ValidationError(f"n_classes must be 3 or 7, got {n_classes}")

    def subset(self, idx) -> "FrameArrays":
        idx = np.asarray(idx)
        return FrameArrays(
            ecg=self.ecg[idx],
            gsr=self.gsr[idx],
            emg=self.emg[idx],
            cp=self.cp[idx],
            muir=self.muir[idx],
            y3=self.y3[idx],
            y7=self.y7[idx],
            step_index=self.step_index[idx],
            step_key=self.step_key[idx],
            session_idx=self.session_idx[idx],
            span_lo=self.span_lo[idx],
            span_hi=self.span_hi[idx],
            subject_id=[self.subject_id[i] for i in idx],
            step_intervals=self.step_intervals,
        )

    def subjects(self) -> list:
        seen = dict.fromkeys(self.subject_id)
        return list(seen)


def build_frame_arrays(
    sessions: Sequence[Session],
    cfg: Optional[WindowingConfig] = None,
    stride: int = 1,
    gamma: float = 0.8,
) -> FrameArrays:
    """Stack every ``stride``-th frame of each session into flat arrays."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    cfg = cfg or WindowingConfig()
    k0 = cfg.emg_grid_count()

    ecg, gsr, emg, cp = [], [], [], []
    muir, y3, y7, step_idx, step_key, sess_idx, span_lo, span_hi, subj = (
        [], [], [], [], [], [], [], [], [],
    )
    step_intervals: dict = {}

    for s_idx, session in enumerate(sessions):
        # Half-open label intervals; first extends to the session start,
        # last to the end of the recording.
        entries = session.labels.entries
        if not entries:
            raise ValidationError(f"session {session.subject_id} has no labels")
        bounds = [e.timestamp_ms for e in entries]
        for j in range(len(entries)):
            lo = -np.inf if j == 0 else bounds[j]
            hi = bounds[j + 1] if j + 1 < len(entries) else np.inf
            step_intervals[(s_idx, entries[j].step_index)] = (s_idx, lo, hi)

        for frame in itertools.islice(frame_stream(session, cfg, gamma), 0, None, stride):
            ecg.append(np.asarray(frame.ecg))
            gsr.append(np.asarray(frame.gsr))
            emg.append(
                np.stack(
                    [
                        pad_emg_windows(frame.emg_left, k0),
                        pad_emg_windows(frame.emg_right, k0),
                    ]
                )
            )
            cp.append(frame.cp.as_array())
            muir.append(frame.muir_mean)
            y3.append(frame.label3.value)
            y7.append(frame.label7 - 1)
            step_idx.append(frame.step_index)
            step_key.append((s_idx, frame.step_index))
            sess_idx.append(s_idx)
            span_lo.append(frame.start_ms)
            span_hi.append(frame.end_ms)
            subj.append(session.subject_id)

    if not ecg:
        raise ValidationError("sessions produced no frames")

    keys = sorted(step_intervals)
    key_id = {k: i for i, k in enumerate(keys)}
    arrays = FrameArrays(
        ecg=np.stack(ecg),
        gsr=np.stack(gsr),
        emg=np.stack(emg),
        cp=np.stack(cp),
        muir=np.asarray(muir),
        y3=np.asarray(y3, dtype=np.int64),
        y7=np.asarray(y7, dtype=np.int64),
        step_index=np.asarray(step_idx, dtype=np.int64),
        step_key=np.asarray([key_id[k] for k in step_key], dtype=np.int64),
        session_idx=np.asarray(sess_idx, dtype=np.int64),
        span_lo=np.asarray(span_lo, dtype=np.float64),
        span_hi=np.asarray(span_hi, dtype=np.float64),
        subject_id=subj,
        step_intervals={key_id[k]: step_intervals[k] for k in keys},
    )
    logger.debug("built %d frames from %d sessions", arrays.n, len(sessions))
    return arrays


def apply_signal_mask(arrays: FrameArrays, signal_mask: Sequence[str]) -> FrameArrays:
    """Zero out the channels not named in ``signal_mask``; shapes unchanged."""
    mask = {m.upper() for m in signal_mask}
    unknown = mask - set(SIGNAL_NAMES)
    if unknown:
        raise ValidationError(f"unknown signals in mask: {sorted(unknown)}")
    return FrameArrays(
        ecg=arrays.ecg if "ECG" in mask else np.zeros_like(arrays.ecg),
        gsr=arrays.gsr if "GSR" in mask else np.zeros_like(arrays.gsr),
        emg=arrays.emg if "EMG" in mask else np.zeros_like(arrays.emg),
        cp=arrays.cp,
        muir=arrays.muir,
        y3=arrays.y3,
        y7=arrays.y7,
        step_index=arrays.step_index,
        step_key=arrays.step_key,
        session_idx=arrays.session_idx,
        span_lo=arrays.span_lo,
        span_hi=arrays.span_hi,
        subject_id=arrays.subject_id,
        step_intervals=arrays.step_intervals,
    )


def split_by_step(
    arrays: FrameArrays, test_fraction: float = 0.2, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Hold out whole step indices across sessions; (train_idx, test_idx).

    Every interval of a held-out step index is tested in every session,
    so a step count seen at test time never appears in training. A frame
    is kept only if its whole time span lies inside intervals of its own
    split, which makes overlap across the split impossible.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    steps = np.unique(arrays.step_index)
    if steps.size < 2:
        raise SplitError(f"need at least 2 step indices, got {steps.size}")

    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(test_fraction * steps.size)))
    if n_test >= steps.size:
        n_test = steps.size - 1
    test_steps = set(rng.choice(steps, size=n_test, replace=False).tolist())

    is_test_frame = np.array([s in test_steps for s in arrays.step_index])

    # Interval assignment follows its step index; group intervals per session.
    step_index_of_key = {}
    for i in range(arrays.n):
        step_index_of_key[int(arrays.step_key[i])] = int(arrays.step_index[i])
    by_session: dict = {}
    for key, (s_idx, ilo, ihi) in arrays.step_intervals.items():
        by_session.setdefault(s_idx, []).append((key, ilo, ihi))

    keep = np.ones(arrays.n, dtype=bool)
    for i in range(arrays.n):
        own = bool(is_test_frame[i])
        lo, hi = arrays.span_lo[i], arrays.span_hi[i]
        for key, ilo, ihi in by_session[arrays.session_idx[i]]:
            if ihi <= lo or ilo >= hi:
                continue
            key_step = step_index_of_key.get(key)
            if key_step is None:
                continue  # interval produced no frames (strided away)
            if (key_step in test_steps) != own:
                keep[i] = False
                break

    idx = np.arange(arrays.n)
    train_idx = idx[keep & ~is_test_frame]
    test_idx = idx[keep & is_test_frame]
    if train_idx.size == 0 or test_idx.size == 0:
        raise SplitError("split produced an empty side; need longer sessions")
    return train_idx, test_idx
