"""Experiment grid: signal combinations, guidance on/off, label resolution.

Each grid cell trains one model per subject (or one pooled model) and
reports mean and standard deviation of accuracy and macro F1 across
subjects, mirroring the per-subject reporting style of the evaluation
tables this harness reproduces on synthetic data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dataset import FrameArrays
from .errors import ValidationError
from .metrics import format_table
from .model import ModelConfig
from .train import TrainConfig, train_and_score

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridCell:
    """One experiment: which signals stay, whether risk tokens guide, head size."""

    signal_mask: tuple
    cp_guidance: bool
    n_classes: int = 3
    name: str = ""

    def label(self) -> str:
        if self.name:
            return self.name
        sig = "+".join(self.signal_mask) if self.signal_mask else "none"
        cp = "+CP" if self.cp_guidance else ""
        return f"{sig}{cp}/{self.n_classes}"


def default_grid() -> list:
    """Single-modality rows, the full-signal rows, and both resolutions."""
    return [
        GridCell(("EMG",), False, 3, "EMG"),
        GridCell(("GSR",), False, 3, "GSR"),
        GridCell(("ECG",), False, 3, "ECG"),
        GridCell((), True, 3, "CP only"),
        GridCell(("ECG", "GSR", "EMG"), False, 3, "all signals"),
        GridCell(("ECG", "GSR", "EMG"), True, 3, "all signals + CP"),
        GridCell(("ECG", "GSR", "EMG"), False, 7, "all signals (7)"),
        GridCell(("ECG", "GSR", "EMG"), True, 7, "all signals + CP (7)"),
    ]


@dataclass
class CellResult:
    cell: GridCell
    per_subject: list  # (subject_id, accuracy, macro_f1)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([a for _, a, _ in self.per_subject])

    @property
    def f1s(self) -> np.ndarray:
        return np.array([f for _, _, f in self.per_subject])

    def summary(self) -> dict:
        acc, f1 = self.accuracies, self.f1s
        ddof = 1 if acc.size > 1 else 0
        return {
            "cell": self.cell.label(),
            "signal_mask": list(self.cell.signal_mask),
            "cp_guidance": self.cell.cp_guidance,
            "n_classes": self.cell.n_classes,
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std(ddof=ddof)),
            "f1_mean": float(f1.mean()),
            "f1_std": float(f1.std(ddof=ddof)),
            "per_subject": [
                {"subject": s, "accuracy": a, "macro_f1": f}
                for s, a, f in self.per_subject
            ],
        }


def _group_by_subject(arrays: FrameArrays) -> dict:
    groups: dict = {}
    for subject in arrays.subjects():
        idx = np.array([i for i, s in enumerate(arrays.subject_id) if s == subject])
        groups[subject] = arrays.subset(idx)
    return groups


def run_grid(
    arrays: FrameArrays,
    grid: Optional[Sequence[GridCell]] = None,
    model_cfg: Optional[ModelConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    pooled: bool = False,
) -> list:
    """Train and score every cell; returns a list of ``CellResult``.

    Per-subject mode needs at least two subjects so the mean and spread
    are meaningful; pooled mode trains one model per cell on everything.
    """
    grid = list(grid) if grid is not None else default_grid()
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()

    groups = {"pooled": arrays} if pooled else _group_by_subject(arrays)
    if not pooled and len(groups) < 2:
        raise ValidationError("per-subject grid needs sessions from >= 2 subjects")

    results = []
    for cell_idx, cell in enumerate(grid):
        per_subject = []
        for subj_idx, (subject, subset) in enumerate(sorted(groups.items())):
            cfg = replace(
                train_cfg,
                signal_mask=tuple(cell.signal_mask),
                cp_guidance=cell.cp_guidance,
                n_classes=cell.n_classes,
                seed=train_cfg.seed + 97 * subj_idx + cell_idx,
            )
            _, report = train_and_score(subset, model_cfg, cfg)
            per_subject.append((subject, report.accuracy, report.macro_f1))
            logger.info(
                "cell %-22s subject %-10s acc %.3f f1 %.3f",
                cell.label(), subject, report.accuracy, report.macro_f1,
            )
        results.append(CellResult(cell=cell, per_subject=per_subject))
    return results


def grid_table(results: Sequence[CellResult]) -> str:
    rows = []
    for r in results:
        s = r.summary()
        rows.append(
            (
                s["cell"],
                f"{100 * s['accuracy_mean']:.1f}",
                f"{100 * s['accuracy_std']:.1f}",
                f"{100 * s['f1_mean']:.1f}",
                f"{100 * s['f1_std']:.1f}",
            )
        )
    return format_table(
        rows, ["cell", "acc mean", "acc std", "f1 mean", "f1 std"]
    )
