"""The trust classifier network.

Per frame: EMG window stacks are length-matched to the ECG/GSR slices by a
shared two-layer feed-forward map, the four channels pass through
reversible instance normalization, are cut into disjoint patches and
linearly projected into a single token stream. The risk vector becomes ten
value-mapped tokens with learned positions. The encoder stacks groups of
plain pre-norm blocks (bias-free layer norm, relative-position attention
bias) capped by a fusion block whose cross-attention reads the risk
tokens; mean-pooled physio tokens feed a linear head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant, parameter
from .errors import ConfigError, FormatError, ShapeError

REVIN_EPS = 1e-5
N_PHYSIO_CHANNELS = 4
N_CP_TOKENS = 10

CHECKPOINT_TAG = "pptp-checkpoint v1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Defaults are desk scale (two groups of one plain block plus one fusion
    block); ``paper_scale`` gives the six-group, three-plain layout whose
    total depth is 24 blocks.
    """

    d_model: int = 64
    n_heads: int = 4
    ffn_mult: int = 4
    patch_len: int = 25
    plain_per_group: int = 1
    groups: int = 2
    rel_pos_max_dist: int = 16
    n_classes: int = 3
    cp_guidance: bool = True
    dropout: float = 0.0
    baseline_concat: bool = False
    samples_per_channel: int = 375
    emg_windows: int = 27
    emg_window_len: int = 272
    emg_hidden: int = 32

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.samples_per_channel % self.patch_len != 0:
            raise ConfigError(
                f"{self.samples_per_channel} samples not divisible by "
                f"patch_len {self.patch_len}"
            )
        if self.n_classes not in (3, 7):
            raise ConfigError(f"n_classes must be 3 or 7, got {self.n_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.plain_per_group < 0 or self.groups < 1:
            raise ConfigError("need groups >= 1 and plain_per_group >= 0")

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        return cls(**{"plain_per_group": 3, "groups": 6, **kw})

    @property
    def n_blocks(self) -> int:
        return (self.plain_per_group + 1) * self.groups

    @property
    def patches_per_channel(self) -> int:
        return self.samples_per_channel // self.patch_len

    @property
    def n_physio_tokens(self) -> int:
        return N_PHYSIO_CHANNELS * self.patches_per_channel

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# reversible instance normalization (single-window functional form)


@dataclass(frozen=True)
class RevinState:
    """Statistics captured at normalization time, enough to invert exactly."""

    mean: float
    scale: float  # sqrt(var + eps)
    gain: float
    shift: float


def revin_normalize(
    x: np.ndarray, gain: float = 1.0, shift: float = 0.0, eps: float = REVIN_EPS
) -> tuple[np.ndarray, RevinState]:
    """Standardize one window, then apply the affine; returns (y, state)."""
    x = np.asarray(x, dtype=np.float64)
    mean = float(x.mean())
    scale = float(np.sqrt(x.var() + eps))
    y = (x - mean) / scale * gain + shift
    return y, RevinState(mean=mean, scale=scale, gain=gain, shift=shift)


def revin_denormalize(state: RevinState, y: np.ndarray) -> np.ndarray:
    """Invert the affine and the standardization recorded in ``state``."""
    y = np.asarray(y, dtype=np.float64)
    return (y - state.shift) / state.gain * state.scale + state.mean


# ---------------------------------------------------------------------------
# emg padding


def pad_emg_windows(windows: np.ndarray, grid_count: int) -> np.ndarray:
    """Zero-pad a [K, W] window stack up to [grid_count, W]."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise ShapeError(f"EMG window stack must be 2-D, got {windows.shape}")
    k = windows.shape[0]
    if k > grid_count:
        raise ShapeError(f"{k} EMG windows exceed the grid count {grid_count}")
    if k == grid_count:
        return windows
    out = np.zeros((grid_count, windows.shape[1]), dtype=np.float64)
    out[:k] = windows
    return out


# ---------------------------------------------------------------------------
# model


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class TrustClassifier:
    """Parameter container plus forward passes for training and inference."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))
        # Fixed tensors reused across forward passes.
        self._revin_ones = constant(np.ones(cfg.samples_per_channel, dtype=self.dtype))
        self._chan_idx = np.arange(N_PHYSIO_CHANNELS)
        self._cp_idx = np.arange(N_CP_TOKENS)
        self._attn_scale = constant(
            np.asarray(1.0 / np.sqrt(cfg.d_model // cfg.n_heads), dtype=self.dtype)
        )
        self._rel_idx: dict[int, np.ndarray] = {}

    # -- parameters -----------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = parameter(value.astype(self.dtype))

    def _init_linear(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self._add(f"{name}.w", _uniform_init(rng, fan_in, (fan_in, fan_out)))
        self._add(f"{name}.b", np.zeros(fan_out))

    def _init_attn(self, rng, prefix: str, d: int) -> None:
        # No key bias: a constant shift of every key adds the same value to
        # each logit row, which softmax cancels, so the parameter would have
        # an identically zero gradient.
        for part in ("q", "v", "o"):
            self._init_linear(rng, f"{prefix}.{part}", d, d)
        self._add(f"{prefix}.k.w", _uniform_init(rng, d, (d, d)))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        d = cfg.d_model
        emg_in = cfg.emg_windows * cfg.emg_window_len

        self._init_linear(rng, "emg_ffn.fc1", emg_in, cfg.emg_hidden)
        self._init_linear(rng, "emg_ffn.fc2", cfg.emg_hidden, cfg.samples_per_channel)

        self._add("revin.gain", np.ones(N_PHYSIO_CHANNELS))
        self._add("revin.shift", np.zeros(N_PHYSIO_CHANNELS))

        self._init_linear(rng, "patch", cfg.patch_len, d)
        self._add("chan_emb", rng.normal(0.0, 0.02, size=(N_PHYSIO_CHANNELS, d)))

        self._init_linear(rng, "cp_value", 1, d)
        self._add("cp_pos", rng.normal(0.0, 0.02, size=(N_CP_TOKENS, d)))

        self._add("rel_bias", rng.normal(0.0, 0.02, size=2 * cfg.rel_pos_max_dist + 1))

        for i in range(cfg.n_blocks):
            p = f"blk{i}"
            self._add(f"{p}.attn_ln.g", np.ones(d))
            self._init_attn(rng, f"{p}.attn", d)
            if self._is_fusion(i):
                self._add(f"{p}.cross_ln.g", np.ones(d))
                self._init_attn(rng, f"{p}.cross", d)
            self._add(f"{p}.ffn_ln.g", np.ones(d))
            self._init_linear(rng, f"{p}.ffn.fc1", d, cfg.ffn_mult * d)
            self._init_linear(rng, f"{p}.ffn.fc2", cfg.ffn_mult * d, d)

        self._init_linear(rng, "head", d, cfg.n_classes)

    def _is_fusion(self, block_index: int) -> bool:
        return block_index % (self.cfg.plain_per_group + 1) == self.cfg.plain_per_group

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise FormatError(f"checkpoint missing parameter {name}")
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ShapeError(
                    f"{name}: checkpoint shape {arr.shape} != model shape {p.data.shape}"
                )
            p.data = arr.copy()

    # -- forward pieces ---------------------------------------------------

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return ad.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def emg_length_match(self, emg: np.ndarray) -> Tensor:
        """Map padded EMG stacks [B, 2, K, W] to pseudo-channels [B, 2, S]."""
        cfg = self.cfg
        if emg.ndim != 4 or emg.shape[2] != cfg.emg_windows or emg.shape[3] != cfg.emg_window_len:
            raise ShapeError(
                f"EMG input must be [B, 2, {cfg.emg_windows}, {cfg.emg_window_len}], "
                f"got {emg.shape}"
            )
        flat = constant(
            emg.reshape(emg.shape[0], emg.shape[1], -1).astype(self.dtype, copy=False)
        )
        h = ad.gelu(self._linear("emg_ffn.fc1", flat))
        return self._linear("emg_ffn.fc2", h)

    def revin(self, x: Tensor) -> Tensor:
        """Instance-normalize [B, C, S] per window with per-channel affine."""
        z = ad.layernorm_nobias(x, self._revin_ones, eps=REVIN_EPS)
        gain = ad.reshape(self.params["revin.gain"], (1, N_PHYSIO_CHANNELS, 1))
        shift = ad.reshape(self.params["revin.shift"], (1, N_PHYSIO_CHANNELS, 1))
        return ad.mul(z, gain) + shift

    def patch_embed(self, channels: Tensor) -> Tensor:
        """Cut [B, C, S] into patches, project, add channel embedding; [B, T, d]."""
        cfg = self.cfg
        b = channels.shape[0]
        p = cfg.patches_per_channel
        x = ad.reshape(channels, (b, N_PHYSIO_CHANNELS, p, cfg.patch_len))
        tok = self._linear("patch", x)
        chan = ad.embedding_lookup(self.params["chan_emb"], self._chan_idx)
        tok = tok + ad.reshape(chan, (1, N_PHYSIO_CHANNELS, 1, cfg.d_model))
        return ad.reshape(tok, (b, cfg.n_physio_tokens, cfg.d_model))

    def cp_embed(self, cp: np.ndarray) -> Tensor:
        """Map risk values (sentinels included) to tokens with positions."""
        if cp.ndim != 2 or cp.shape[1] != N_CP_TOKENS:
            raise ShapeError(f"cp input must be [B, {N_CP_TOKENS}], got {cp.shape}")
        vals = constant(cp[:, :, None].astype(self.dtype, copy=False))
        tok = self._linear("cp_value", vals)
        pos = ad.embedding_lookup(self.params["cp_pos"], self._cp_idx)
        return tok + pos

    def _rel_bias_matrix(self, n_tokens: int, positions: Optional[np.ndarray] = None) -> Tensor:
        """Self-attention bias from clipped pairwise position offsets."""
        m = self.cfg.rel_pos_max_dist
        if positions is None:
            rel = self._rel_idx.get(n_tokens)
            if rel is None:
                pos = np.arange(n_tokens)
                rel = np.clip(pos[:, None] - pos[None, :], -m, m) + m
                self._rel_idx[n_tokens] = rel
        else:
            pos = np.asarray(positions)
            rel = np.clip(pos[:, None] - pos[None, :], -m, m) + m
        return ad.embedding_lookup(self.params["rel_bias"], rel)

    def _attention(
        self,
        prefix: str,
        q_in: Tensor,
        kv_in: Tensor,
        rel_bias: Optional[Tensor] = None,
    ) -> Tensor:
        cfg = self.cfg
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

        def split(x: Tensor, t: int) -> Tensor:
            return ad.transpose(ad.reshape(x, (b, t, h, dh)), 1, 2)

        q = split(self._linear(f"{prefix}.q", q_in), tq)
        k = split(ad.matmul(kv_in, self.params[f"{prefix}.k.w"]), tk)
        v = split(self._linear(f"{prefix}.v", kv_in), tk)

        # Scaling q first is cheaper than scaling the [.., Tq, Tk] logits.
        logits = ad.matmul(ad.mul(q, self._attn_scale), ad.transpose(k))
        if rel_bias is not None:
            logits = logits + rel_bias
        probs = ad.softmax(logits, axis=-1)
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), 1, 2), (b, tq, cfg.d_model))
        return self._linear(f"{prefix}.o", ctx)

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        return self._linear(f"{prefix}.fc2", ad.gelu(self._linear(f"{prefix}.fc1", x)))

    def _dropout(self, x: Tensor, train: bool, rng) -> Tensor:
        p = self.cfg.dropout
        if not train or p <= 0.0 or rng is None:
            return x
        mask = (rng.random(x.shape) >= p).astype(self.dtype) / (1.0 - p)
        return ad.mul(x, constant(mask))

    def _block(
        self,
        i: int,
        x: Tensor,
        cp_tokens: Optional[Tensor],
        rel_bias: Tensor,
        train: bool,
        rng,
    ) -> Tensor:
        p = f"blk{i}"
        a = ad.layernorm_nobias(x, self.params[f"{p}.attn_ln.g"])
        x = x + self._dropout(self._attention(f"{p}.attn", a, a, rel_bias), train, rng)
        if self._is_fusion(i) and cp_tokens is not None:
            c = ad.layernorm_nobias(x, self.params[f"{p}.cross_ln.g"])
            x = x + self._dropout(
                self._attention(f"{p}.cross", c, cp_tokens), train, rng
            )
        f = ad.layernorm_nobias(x, self.params[f"{p}.ffn_ln.g"])
        x = x + self._dropout(self._ffn(f"{p}.ffn", f), train, rng)
        return x

    # -- full passes ------------------------------------------------------

    def encode(
        self,
        ecg: np.ndarray,
        gsr: np.ndarray,
        emg: np.ndarray,
        cp: np.ndarray,
        train: bool = False,
        rng=None,
    ) -> Tensor:
        """Pooled representation [B, d] of one batch of frames."""
        cfg = self.cfg
        emg375 = self.emg_length_match(emg)
        phys = ad.concat(
            [
                constant(ecg[:, None, :].astype(self.dtype, copy=False)),
                constant(gsr[:, None, :].astype(self.dtype, copy=False)),
                emg375,
            ],
            axis=1,
        )
        tokens = self.patch_embed(self.revin(phys))
        cp_tokens = self.cp_embed(cp)

        if cfg.baseline_concat:
            # Plain-transformer baseline: risk tokens join the stream and
            # every block is plain; pooling covers all tokens.
            tokens = ad.concat([tokens, cp_tokens], axis=1)
            rel = self._rel_bias_matrix(tokens.shape[1])
            for i in range(cfg.n_blocks):
                tokens = self._block(i, tokens, None, rel, train, rng)
            return ad.mean_pool(tokens, axis=1)

        rel = self._rel_bias_matrix(cfg.n_physio_tokens)
        guided = cp_tokens if cfg.cp_guidance else None
        for i in range(cfg.n_blocks):
            tokens = self._block(i, tokens, guided, rel, train, rng)
        return ad.mean_pool(tokens, axis=1)

    def logits(
        self,
        ecg: np.ndarray,
        gsr: np.ndarray,
        emg: np.ndarray,
        cp: np.ndarray,
        train: bool = False,
        rng=None,
    ) -> Tensor:
        pooled = self.encode(ecg, gsr, emg, cp, train=train, rng=rng)
        return self._linear("head", pooled)

    def predict(self, ecg, gsr, emg, cp) -> np.ndarray:
        """Class ids, ties broken toward the lower id (argmax convention)."""
        with ad.no_grad():
            out = self.logits(ecg, gsr, emg, cp)
        return np.argmax(out.data, axis=1)


# ---------------------------------------------------------------------------
# checkpoint io: version tag line, text manifest of (name, shape) pairs,
# blank separator, then raw little-endian float32 arrays in manifest order.


def save_checkpoint(path, model: TrustClassifier) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(model.params)
    with open(path, "wb") as f:
        f.write((CHECKPOINT_TAG + "\n").encode("ascii"))
        for name in names:
            shape = ",".join(str(d) for d in model.params[name].shape)
            f.write(f"{name} {shape}\n".encode("ascii"))
        f.write(b"\n")
        for name in names:
            f.write(model.params[name].data.astype("<f4").tobytes())
    return path


def random_frame_batch(cfg: ModelConfig, batch_size: int, rng: np.random.Generator) -> dict:
    """A synthetic input batch with realistic shapes and sentinel-bearing cp."""
    cp = np.full((batch_size, N_CP_TOKENS), -1.0)
    for row in cp:
        n = int(rng.integers(0, N_CP_TOKENS + 1))
        row[:n] = rng.uniform(0.0, 1.2, size=n)
        if n and rng.random() < 0.2:
            row[n - 1 :] = -2.0
    return {
        "ecg": rng.standard_normal((batch_size, cfg.samples_per_channel)),
        "gsr": rng.standard_normal((batch_size, cfg.samples_per_channel)),
        "emg": rng.standard_normal(
            (batch_size, 2, cfg.emg_windows, cfg.emg_window_len)
        ),
        "cp": cp,
        "classes": rng.integers(0, cfg.n_classes, size=batch_size),
    }


def full_model_grad_check(
    cfg: Optional[ModelConfig] = None,
    batch_size: int = 2,
    seed: int = 0,
    samples_per_array: int = 200,
) -> float:
    """Finite-difference check of the whole network's loss gradient."""
    cfg = cfg or ModelConfig()
    model = TrustClassifier(cfg, seed=seed, dtype=np.float64)
    batch = random_frame_batch(cfg, batch_size, np.random.default_rng(seed + 1))

    def loss() -> Tensor:
        out = model.logits(batch["ecg"], batch["gsr"], batch["emg"], batch["cp"])
        return ad.cross_entropy(out, batch["classes"])

    return ad.grad_check(
        loss,
        model.params,
        samples_per_array=samples_per_array,
        rng=np.random.default_rng(seed + 2),
    )


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a name -> float32 array mapping."""
    path = Path(path)
    with open(path, "rb") as f:
        tag = f.readline().decode("ascii").strip()
        if tag != CHECKPOINT_TAG:
            raise FormatError(f"unrecognized checkpoint tag {tag!r}")
        manifest = []
        while True:
            line = f.readline().decode("ascii")
            if line in ("\n", ""):
                break
            name, _, shape_s = line.strip().partition(" ")
            shape = tuple(int(d) for d in shape_s.split(",") if d)
            manifest.append((name, shape))
        arrays = {}
        for name, shape in manifest:
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * count)
            if len(buf) != 4 * count:
                raise FormatError(f"checkpoint truncated while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return arrays
