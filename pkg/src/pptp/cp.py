"""Collaboration-performance scoring of block constructions.

Per block, skew is the layer-weighted horizontal offset from the support
center (base-layer blocks score zero). Per session, a 10-slot failure-risk
vector accumulates skews with a geometric discount; slots for blocks not
yet stacked hold -1, and from the collapsing step onward slots hold -2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

if TYPE_CHECKING:
    from .session import BlockPlacement

N_SLOTS = 10
UNSTACKED = -1.0
COLLAPSED = -2.0
DEFAULT_GAMMA = 0.8


def support_center(support_centers: Sequence[float]) -> float:
    """Horizontal center of the support: one block's center or the mean of two."""
    if not 1 <= len(support_centers) <= 2:
        raise ValidationError(
            f"support_center needs 1 or 2 supports, got {len(support_centers)}"
        )
    return float(sum(support_centers)) / len(support_centers)


def block_skew(placement: "BlockPlacement") -> float:
    """Skew of a single placed block: |x_e - x_s| * layer, zero on the base layer."""
    if placement.layer < 1:
        raise ValidationError(f"layer must be >= 1, got {placement.layer}")
    if placement.layer == 1:
        return 0.0
    if not placement.support_centers:
        raise ValidationError(
            f"step {placement.step_index}: layer {placement.layer} block has no supports"
        )
    x_s = support_center(placement.support_centers)
    return abs(placement.x_center - x_s) * placement.layer


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")


def failure_risk_step(prev: float, s_n: float, gamma: float) -> float:
    """One recursion step of the discounted risk: F_n = s_n + gamma * F_{n-1}.

    With prev = 0 this covers the first step; iterating reproduces the
    closed-form sum of gamma^(n-k) * s_k exactly.
    """
    _check_gamma(gamma)
    return s_n + gamma * prev


@dataclass(frozen=True)
class FailureRiskVector:
    """10-slot discounted risk record with sentinel semantics.

    Slot k (1-based) is either a nonnegative accumulated risk, -1 if block
    k is not yet stacked, or -2 from the collapsing step onward.
    """

    f: np.ndarray
    gamma: float = DEFAULT_GAMMA
    n_stacked: int = 0
    collapsed: bool = False

    def __post_init__(self):
        arr = np.asarray(self.f, dtype=np.float64)
        if arr.shape != (N_SLOTS,):
            raise ValidationError(f"risk vector must have {N_SLOTS} slots, got {arr.shape}")
        object.__setattr__(self, "f", arr)
        _check_gamma(self.gamma)
        if not 0 <= self.n_stacked <= N_SLOTS:
            raise ValidationError(f"n_stacked {self.n_stacked} outside 0..{N_SLOTS}")

    def as_array(self) -> np.ndarray:
        return self.f.copy()

    def __iter__(self):
        return iter(self.f)


def failure_risk_vector(
    placements: Sequence["BlockPlacement"],
    upto_ms: int | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> FailureRiskVector:
    """Risk vector over the placements with timestamp <= ``upto_ms``.

    Stacked slots follow the discount recursion; the rest stay -1. If the
    last considered placement collapsed the construction, its slot and all
    later slots become -2 while earlier slots keep their values.
    """
    _check_gamma(gamma)
    if upto_ms is None:
        relevant = list(placements)
    else:
        relevant = [p for p in placements if p.timestamp_ms <= upto_ms]

    f = np.full(N_SLOTS, UNSTACKED, dtype=np.float64)
    prev = 0.0
    for p in relevant:
        prev = failure_risk_step(prev, block_skew(p), gamma)
        f[p.step_index - 1] = prev

    collapsed = bool(relevant) and relevant[-1].collapsed_after
    if collapsed:
        f[relevant[-1].step_index - 1 :] = COLLAPSED
    return FailureRiskVector(
        f=f, gamma=gamma, n_stacked=len(relevant), collapsed=collapsed
    )


def risk_trace(
    placements: Sequence["BlockPlacement"], gamma: float = DEFAULT_GAMMA
) -> list:
    """Per-step (step_index, skew, risk) triples over the full placement list."""
    _check_gamma(gamma)
    out = []
    prev = 0.0
    for p in placements:
        s = block_skew(p)
        prev = failure_risk_step(prev, s, gamma)
        out.append((p.step_index, s, prev))
    return out
