"""Training loop, Adam optimizer, and dataset evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .dataset import FrameArrays, apply_signal_mask, split_by_step
from .errors import TrainingError, ValidationError
from .metrics import MetricsReport, compute_metrics, verify_report
from .model import ModelConfig, TrustClassifier

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and experiment knobs."""

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    test_fraction: float = 0.2
    signal_mask: tuple = ("ECG", "GSR", "EMG")
    cp_guidance: bool = True
    n_classes: int = 3
    frame_stride: int = 5
    dtype: str = "float32"
    shuffle_train_labels: bool = False
    cp_noise_sd: float = 0.0  # train-time jitter on risk values, an anti-memorization aid

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainResult:
    model: TrustClassifier
    train_loss: list
    test_accuracy: list
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def final_test_accuracy(self) -> float:
        return self.test_accuracy[-1]


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _batch_views(arrays: FrameArrays, idx: np.ndarray, dtype) -> dict:
    return {
        "ecg": arrays.ecg[idx].astype(dtype, copy=False),
        "gsr": arrays.gsr[idx].astype(dtype, copy=False),
        "emg": arrays.emg[idx].astype(dtype, copy=False),
        "cp": arrays.cp[idx].astype(dtype, copy=False),
    }


def predict_dataset(
    model: TrustClassifier, arrays: FrameArrays, batch_size: int = 64
) -> np.ndarray:
    """Predicted class ids over a whole dataset, batched."""
    preds = np.empty(arrays.n, dtype=np.int64)
    for start in range(0, arrays.n, batch_size):
        idx = np.arange(start, min(start + batch_size, arrays.n))
        b = _batch_views(arrays, idx, model.dtype)
        preds[idx] = model.predict(b["ecg"], b["gsr"], b["emg"], b["cp"])
    return preds


def evaluate(
    model: TrustClassifier, arrays: FrameArrays, n_classes: Optional[int] = None
) -> MetricsReport:
    """Metrics of ``model`` on every frame in ``arrays``."""
    if arrays.n == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    n_classes = n_classes or model.cfg.n_classes
    if n_classes != model.cfg.n_classes:
        raise ValidationError(
            f"dataset labels ({n_classes}) do not match model head "
            f"({model.cfg.n_classes})"
        )
    truth = arrays.labels(n_classes)
    pred = predict_dataset(model, arrays)
    report = compute_metrics(truth, pred, n_classes)
    verify_report(report, arrays.n)
    return report


def train(
    arrays: FrameArrays,
    model_cfg: Optional[ModelConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
) -> TrainResult:
    """Split by step, mask signals, and fit the classifier with Adam.

    Deterministic for a fixed config and seed. Raises ``TrainingError``
    with the epoch index if the loss stops being finite.
    """
    train_cfg = train_cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig()
    if model_cfg.n_classes != train_cfg.n_classes:
        model_cfg = replace(model_cfg, n_classes=train_cfg.n_classes)
    if model_cfg.cp_guidance != train_cfg.cp_guidance:
        model_cfg = replace(model_cfg, cp_guidance=train_cfg.cp_guidance)

    dtype = np.dtype(train_cfg.dtype)
    masked = apply_signal_mask(arrays, train_cfg.signal_mask)
    train_idx, test_idx = split_by_step(
        masked, test_fraction=train_cfg.test_fraction, seed=train_cfg.seed
    )
    train_set = masked.subset(train_idx)
    test_set = masked.subset(test_idx)

    y_train = train_set.labels(train_cfg.n_classes).copy()
    classes_present = np.unique(y_train)
    if classes_present.size < 2:
        raise ValidationError(
            f"training labels contain {classes_present.size} class; need >= 2"
        )

    rng = np.random.default_rng(train_cfg.seed)
    if train_cfg.shuffle_train_labels:
        y_train = rng.permutation(y_train)

    model = TrustClassifier(model_cfg, seed=train_cfg.seed, dtype=dtype)
    opt = Adam(
        model.params,
        lr=train_cfg.lr,
        betas=(train_cfg.beta1, train_cfg.beta2),
        eps=train_cfg.adam_eps,
    )

    losses, accs = [], []
    t_start = time.time()
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(train_set.n)
        epoch_loss = 0.0
        for start in range(0, train_set.n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            b = _batch_views(train_set, idx, dtype)
            if train_cfg.cp_noise_sd > 0.0:
                b["cp"] = b["cp"] + rng.normal(
                    0.0, train_cfg.cp_noise_sd, size=b["cp"].shape
                ).astype(dtype)
            opt.zero_grad()
            logits = model.logits(
                b["ecg"], b["gsr"], b["emg"], b["cp"], train=True, rng=rng
            )
            loss = ad.cross_entropy(logits, y_train[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}", epoch=epoch
                )
            ad.backward(loss)
            opt.step()
            epoch_loss += value * idx.size
        losses.append(epoch_loss / train_set.n)

        pred = predict_dataset(model, test_set)
        acc = float(
            (pred == test_set.labels(train_cfg.n_classes)).mean()
        )
        accs.append(acc)
        logger.debug(
            "epoch %d: loss %.4f, test acc %.3f", epoch, losses[-1], accs[-1]
        )

    logger.info(
        "trained %d epochs on %d frames in %.1fs (test acc %.3f)",
        train_cfg.epochs,
        train_set.n,
        time.time() - t_start,
        accs[-1],
    )
    return TrainResult(
        model=model,
        train_loss=losses,
        test_accuracy=accs,
        train_idx=train_idx,
        test_idx=test_idx,
    )


def train_and_score(
    arrays: FrameArrays,
    model_cfg: Optional[ModelConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
) -> tuple[TrainResult, MetricsReport]:
    """Train, then report metrics on the held-out step intervals."""
    train_cfg = train_cfg or TrainConfig()
    result = train(arrays, model_cfg, train_cfg)
    masked = apply_signal_mask(arrays, train_cfg.signal_mask)
    report = evaluate(result.model, masked.subset(result.test_idx))
    return result, report
