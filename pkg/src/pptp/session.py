"""Session data model and its on-disk directory format.

A session directory contains:
  meta.json        subject_id, difficulty, per-channel rates, t0_ms
  ecg.csv          one float per line, header ``# rate_hz=<r> t0_ms=<t>``
  gsr.csv          same layout
  emg_left.csv     same layout
  emg_right.csv    same layout
  placements.jsonl one block placement object per line
  labels.jsonl     one questionnaire entry per line

All numbers are decimal text; samples are written with 17 significant
digits so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    FormatError,
    MissingChannel,
    SessionWriteError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DIFFICULTIES = ("LD", "MD", "HD")

MAX_BLOCKS = 10

MUIR_MIN = 1.0
MUIR_MAX = 7.0


class ChannelKind(str, Enum):
    ECG = "ecg"
    GSR = "gsr"
    EMG_LEFT = "emg_left"
    EMG_RIGHT = "emg_right"


CHANNEL_FILES = {kind: f"{kind.value}.csv" for kind in ChannelKind}

NOMINAL_RATES = {
    ChannelKind.ECG: 125.0,
    ChannelKind.GSR: 125.0,
    ChannelKind.EMG_LEFT: 1260.0,
    ChannelKind.EMG_RIGHT: 1260.0,
}


@dataclass(frozen=True)
class SignalChannel:
    """One recorded signal: samples at a fixed rate starting at t0_ms."""

    kind: ChannelKind
    sample_rate_hz: float
    samples: np.ndarray
    t0_ms: int = 0

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"{self.kind}: sample_rate_hz must be positive")
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.float64)
        )
        if self.samples.ndim != 1:
            raise ValidationError(f"{self.kind}: samples must be one-dimensional")

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_ms(self) -> float:
        return self.n_samples * 1000.0 / self.sample_rate_hz

    @property
    def end_ms(self) -> float:
        """Timestamp just past the last recorded sample."""
        return self.t0_ms + self.duration_ms


@dataclass(frozen=True)
class BlockPlacement:
    """One completed stacking step with its measured horizontal skew inputs.

    Coordinates are normalized by block width, so they are dimensionless.
    ``support_centers`` holds the placed x-coordinates of the one or two
    blocks directly beneath; empty only for base-layer blocks.
    """

    step_index: int
    layer: int
    x_center: float
    support_centers: tuple
    timestamp_ms: int
    collapsed_after: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "support_centers", tuple(float(x) for x in self.support_centers)
        )
        if not 1 <= self.step_index <= MAX_BLOCKS:
            raise ValidationError(
                f"step_index {self.step_index} outside 1..{MAX_BLOCKS}"
            )
        if self.layer < 1:
            raise ValidationError(f"layer must be >= 1, got {self.layer}")
        if self.layer > 1 and not 1 <= len(self.support_centers) <= 2:
            raise ValidationError(
                f"step {self.step_index}: layer {self.layer} block needs 1 or 2 supports"
            )
        if len(self.support_centers) > 2:
            raise ValidationError(
                f"step {self.step_index}: at most 2 supports, got {len(self.support_centers)}"
            )


@dataclass(frozen=True)
class LabelEntry:
    """Questionnaire scores recorded when a placement step completed."""

    step_index: int
    timestamp_ms: int
    muir_mean: float
    nasa_tlx_mean: Optional[float] = None

    def __post_init__(self):
        if not MUIR_MIN <= self.muir_mean <= MUIR_MAX:
            raise ValidationError(
                f"muir_mean {self.muir_mean} outside [{MUIR_MIN}, {MUIR_MAX}]"
            )


@dataclass(frozen=True)
class LabelTrack:
    """Per-step questionnaire entries, ordered by time."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Session:
    """One subject x task recording: channels, placements, and labels."""

    subject_id: str
    difficulty: str
    channels: dict
    placements: tuple = ()
    labels: LabelTrack = field(default_factory=lambda: LabelTrack(()))
    t0_ms: int = 0

    def __post_init__(self):
        self.placements = tuple(self.placements)
        self.validate()

    def channel(self, kind: ChannelKind) -> SignalChannel:
        return self.channels[kind]

    @property
    def span_end_ms(self) -> float:
        """End of the usable recording: shortest channel wins."""
        return min(ch.end_ms for ch in self.channels.values())

    def validate(self) -> None:
        if self.difficulty not in DIFFICULTIES:
            raise ValidationError(f"unknown difficulty {self.difficulty!r}")
        for kind in ChannelKind:
            if kind not in self.channels:
                raise MissingChannel(kind.value)
            ch = self.channels[kind]
            if ch.kind != kind:
                raise ValidationError(f"channel stored under wrong kind: {kind}")
            if ch.n_samples == 0:
                raise ValidationError(f"channel {kind.value} has no samples")
            if ch.t0_ms != self.t0_ms:
                raise ValidationError(
                    f"channel {kind.value} t0_ms {ch.t0_ms} != session t0_ms {self.t0_ms}"
                )
        if len(self.channels) != len(ChannelKind):
            raise ValidationError("unexpected extra channels present")

        expected = 1
        prev_ts = None
        for i, p in enumerate(self.placements):
            if p.step_index != expected:
                raise ValidationError(
                    f"placement step_index gap: expected {expected}, got {p.step_index}"
                )
            expected += 1
            if prev_ts is not None and p.timestamp_ms < prev_ts:
                raise ValidationError("placement timestamps must be non-decreasing")
            prev_ts = p.timestamp_ms
            if p.collapsed_after and i != len(self.placements) - 1:
                raise ValidationError("collapsed_after allowed only on the last placement")

        prev_ts = None
        for e in self.labels.entries:
            if prev_ts is not None and e.timestamp_ms < prev_ts:
                raise ValidationError("label timestamps must be non-decreasing")
            prev_ts = e.timestamp_ms
        label_steps = [e.step_index for e in self.labels.entries]
        placement_steps = [p.step_index for p in self.placements]
        if label_steps != placement_steps:
            raise ValidationError(
                f"label steps {label_steps} do not match placement steps {placement_steps}"
            )


def _write_channel(path: Path, ch: SignalChannel) -> None:
    with open(path, "w") as f:
        f.write(f"# rate_hz={ch.sample_rate_hz:g} t0_ms={ch.t0_ms}\n")
        for v in ch.samples:
            f.write(f"{v:.17g}\n")


def _read_channel(path: Path, kind: ChannelKind) -> SignalChannel:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("#"):
            raise FormatError(f"{path.name}: missing header line")
        fields = dict(
            tok.split("=", 1) for tok in header.lstrip("#").split() if "=" in tok
        )
        try:
            rate = float(fields["rate_hz"])
            t0 = int(fields["t0_ms"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path.name}: bad header {header!r}") from exc
        samples = np.loadtxt(f, dtype=np.float64, ndmin=1)
    return SignalChannel(kind=kind, sample_rate_hz=rate, samples=samples, t0_ms=t0)


def save_session(session: Session, path) -> Path:
    """Write ``session`` as a directory; returns the directory path."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "subject_id": session.subject_id,
            "difficulty": session.difficulty,
            "rates": {
                kind.value: session.channels[kind].sample_rate_hz
                for kind in ChannelKind
            },
            "t0_ms": session.t0_ms,
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        for kind in ChannelKind:
            _write_channel(path / CHANNEL_FILES[kind], session.channels[kind])
        with open(path / "placements.jsonl", "w") as f:
            for p in session.placements:
                f.write(
                    json.dumps(
                        {
                            "step_index": p.step_index,
                            "layer": p.layer,
                            "x_center": p.x_center,
                            "support_centers": list(p.support_centers),
                            "timestamp_ms": p.timestamp_ms,
                            "collapsed_after": p.collapsed_after,
                        }
                    )
                    + "\n"
                )
        with open(path / "labels.jsonl", "w") as f:
            for e in session.labels.entries:
                f.write(
                    json.dumps(
                        {
                            "step_index": e.step_index,
                            "timestamp_ms": e.timestamp_ms,
                            "muir_mean": e.muir_mean,
                            "nasa_tlx_mean": e.nasa_tlx_mean,
                        }
                    )
                    + "\n"
                )
    except OSError as exc:
        raise SessionWriteError(f"failed writing session to {path}: {exc}") from exc
    return path


def load_session(path) -> Session:
    """Load and validate a session directory."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{path}: meta.json not found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: meta.json is not valid JSON") from exc

    channels = {}
    for kind in ChannelKind:
        ch_path = path / CHANNEL_FILES[kind]
        if not ch_path.exists():
            raise MissingChannel(kind.value)
        ch = _read_channel(ch_path, kind)
        meta_rate = meta.get("rates", {}).get(kind.value)
        if meta_rate is not None and float(meta_rate) != ch.sample_rate_hz:
            raise FormatError(
                f"{kind.value}: meta rate {meta_rate} != header rate {ch.sample_rate_hz}"
            )
        channels[kind] = ch

    placements = []
    pl_path = path / "placements.jsonl"
    if pl_path.exists():
        for line in pl_path.read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            placements.append(
                BlockPlacement(
                    step_index=int(d["step_index"]),
                    layer=int(d["layer"]),
                    x_center=float(d["x_center"]),
                    support_centers=tuple(d.get("support_centers", ())),
                    timestamp_ms=int(d["timestamp_ms"]),
                    collapsed_after=bool(d.get("collapsed_after", False)),
                )
            )

    entries = []
    lb_path = path / "labels.jsonl"
    if lb_path.exists():
        for line in lb_path.read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            nasa = d.get("nasa_tlx_mean")
            entries.append(
                LabelEntry(
                    step_index=int(d["step_index"]),
                    timestamp_ms=int(d["timestamp_ms"]),
                    muir_mean=float(d["muir_mean"]),
                    nasa_tlx_mean=None if nasa is None else float(nasa),
                )
            )

    session = Session(
        subject_id=str(meta.get("subject_id", path.name)),
        difficulty=str(meta.get("difficulty", "LD")),
        channels=channels,
        placements=tuple(placements),
        labels=LabelTrack(tuple(entries)),
        t0_ms=int(meta.get("t0_ms", 0)),
    )
    logger.debug(
        "loaded session %s (%s): %d placements, %d labels",
        session.subject_id,
        session.difficulty,
        len(session.placements),
        len(session.labels),
    )
    return session


def find_session_dirs(root) -> list:
    """All directories under ``root`` that look like session directories."""
    root = Path(root)
    if (root / "meta.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/meta.json"))
