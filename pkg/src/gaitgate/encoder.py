"""Convolutional spectrogram encoder producing unit-norm embeddings.

Architecture: repeated [3x3 same-padding conv -> ReLU -> 2x2 max-pool] stages
(channels 1 -> 16 -> 32 -> 64 by default), global average pool, one dense
layer to the embedding dimension, then L2 normalization. Forward and reverse
passes are written directly in numpy: the training loss needs exact analytic
gradients that we can check against finite differences, which rules out
treating the network as a black box.

Everything here is deterministic: initialization from a seed, forward passes
bit-stable for fixed inputs, no hidden global state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Xoshiro256StarStar
from .signal import AccelSeries, Spectrogram, StftConfig
from . import signal

log = logging.getLogger(__name__)

KERNEL = 3  # conv kernels are KERNEL x KERNEL, same padding
POOL = 2  # max-pool windows are POOL x POOL, floor division on odd dims


@dataclass(frozen=True)
class EncoderConfig:
    input_shape: tuple[int, int]
    conv_channels: tuple[int, ...] = (16, 32, 64)
    embedding_dim: int = 64
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if not self.conv_channels:
            raise ValueError("need at least one conv stage")
        if min(self.input_shape) < 1:
            raise ValueError(f"input {self.input_shape} collapses below 1x1")

    @property
    def stage_shapes(self) -> list[tuple[int, int]]:
        """Spatial dims after each pool stage."""
        h, w = self.input_shape
        out = []
        for _ in self.conv_channels:
            h, w = _pooled_dim(h), _pooled_dim(w)
            out.append((h, w))
        return out

    @classmethod
    def from_params(cls, params: "ParameterSet", input_shape: tuple[int, int]) -> "EncoderConfig":
        """Recover the architecture from tensor shapes (seed is not stored)."""
        channels = []
        i = 0
        while f"conv{i}/w" in params:
            channels.append(params[f"conv{i}/w"].shape[0])
            i += 1
        if not channels or "dense/w" not in params:
            raise ValueError("parameter set does not look like an encoder")
        return cls(
            input_shape=input_shape,
            conv_channels=tuple(channels),
            embedding_dim=params["dense/w"].shape[1],
        )


class ParameterSet:
    """Ordered named tensors. Treated as immutable once constructed."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._tensors: dict[str, np.ndarray] = {}
        for name, t in tensors.items():
            t = np.asarray(t)
            if not np.isfinite(t).all():
                raise ValueError(f"non-finite values in tensor {name!r}")
            self._tensors[name] = t

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: v.astype(dtype) for k, v in self.items()})

    def allclose(self, other: "ParameterSet", rtol: float = 0.0, atol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        return all(
            np.allclose(self[k], other[k], rtol=rtol, atol=atol) for k in self.names
        )


def init_params(cfg: EncoderConfig, dtype=np.float32) -> ParameterSet:
    """He-uniform fan-in initialization; biases zero; deterministic per seed.

    Weights are drawn tensor by tensor in layer order, each flat row-major,
    uniform in +-sqrt(6 / fan_in).
    """
    rng = Xoshiro256StarStar(cfg.init_seed)
    tensors: dict[str, np.ndarray] = {}
    c_in = 1
    for i, c_out in enumerate(cfg.conv_channels):
        fan_in = c_in * KERNEL * KERNEL
        limit = np.sqrt(6.0 / fan_in)
        shape = (c_out, c_in, KERNEL, KERNEL)
        draws = rng.uniforms(int(np.prod(shape)))
        tensors[f"conv{i}/w"] = (limit * (2.0 * draws - 1.0)).reshape(shape).astype(dtype)
        tensors[f"conv{i}/b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    limit = np.sqrt(6.0 / c_in)
    draws = rng.uniforms(c_in * cfg.embedding_dim)
    tensors["dense/w"] = (
        (limit * (2.0 * draws - 1.0)).reshape(c_in, cfg.embedding_dim).astype(dtype)
    )
    tensors["dense/b"] = np.zeros(cfg.embedding_dim, dtype=dtype)
    return ParameterSet(tensors)


def _conv_same(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """3x3 same-padding convolution. x: (B,C,H,W), w: (O,C,3,3) -> (B,O,H,W)."""
    pad = KERNEL // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def _pooled_dim(n: int) -> int:
    """Output length of one spatial dim: floor(n/2), but size-1 passes through."""
    return n // POOL if n >= POOL else 1


def _maxpool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """2x2 max-pool with floor division; odd trailing rows/cols are dropped.

    A dimension already at size 1 is passed through unpooled, so deep stacks
    never collapse a narrow input below 1x1. Returns (pooled, argmax over
    the pool cells, original spatial shape).
    """
    b, c, h, w = x.shape
    ph = POOL if h >= POOL else 1
    pw = POOL if w >= POOL else 1
    h2, w2 = h // ph, w // pw
    cropped = x[:, :, : h2 * ph, : w2 * pw]
    cells = (
        cropped.reshape(b, c, h2, ph, w2, pw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2, w2, ph * pw)
    )
    idx = cells.argmax(axis=-1)
    pooled = np.take_along_axis(cells, idx[..., None], axis=-1)[..., 0]
    return pooled, idx, (h, w)


def _maxpool_backward(
    dy: np.ndarray, idx: np.ndarray, orig_hw: tuple[int, int]
) -> np.ndarray:
    b, c, h2, w2 = dy.shape
    h, w = orig_hw
    ph = POOL if h >= POOL else 1
    pw = POOL if w >= POOL else 1
    cells = np.zeros((b, c, h2, w2, ph * pw), dtype=dy.dtype)
    np.put_along_axis(cells, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros((b, c, h, w), dtype=dy.dtype)
    dx[:, :, : h2 * ph, : w2 * pw] = (
        cells.reshape(b, c, h2, w2, ph, pw)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2 * ph, w2 * pw)
    )
    return dx


def forward_batch_cached(params: ParameterSet, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Embed a (B, F, T) spectrogram batch, keeping activations for backprop.

    Returns (Z, cache) with Z of shape (B, D), every row unit norm. A zero
    pre-normalization vector (possible when an input is identically zero and
    biases are zero) raises rather than dividing by zero.
    """
    n_stages = sum(1 for name in params.names if name.endswith("/w")) - 1
    dtype = params["dense/w"].dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3:
        raise ValueError(f"expected batch shape (B, F, T), got {x.shape}")
    h = x[:, None, :, :]
    stages = []
    for i in range(n_stages):
        conv = _conv_same(h, params[f"conv{i}/w"], params[f"conv{i}/b"])
        relu = np.maximum(conv, 0.0)
        pooled, idx, orig_hw = _maxpool(relu)
        stages.append({"x": h, "relu": relu, "idx": idx, "orig_hw": orig_hw})
        h = pooled
    spatial = h.shape[2] * h.shape[3]
    gap = h.mean(axis=(2, 3))
    pre = gap @ params["dense/w"] + params["dense/b"]
    norms = np.linalg.norm(pre, axis=1)
    if (norms == 0.0).any():
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"degenerate embedding: zero pre-normalization vector at batch index {bad}")
    z = pre / norms[:, None]
    cache = {
        "stages": stages,
        "pooled": h,
        "spatial": spatial,
        "gap": gap,
        "pre": pre,
        "norms": norms,
        "z": z,
    }
    return z, cache


def backward_batch(params: ParameterSet, cache: dict, dz: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dZ.

    Exact reverse of forward_batch_cached; ReLU uses subgradient 0 at 0.
    """
    z, norms = cache["z"], cache["norms"]
    # through z = pre / ||pre||
    dpre = (dz - z * (z * dz).sum(axis=1, keepdims=True)) / norms[:, None]
    grads: dict[str, np.ndarray] = {}
    grads["dense/w"] = cache["gap"].T @ dpre
    grads["dense/b"] = dpre.sum(axis=0)
    dgap = dpre @ params["dense/w"].T
    pooled = cache["pooled"]
    dh = np.broadcast_to(
        dgap[:, :, None, None] / cache["spatial"], pooled.shape
    ).astype(pooled.dtype)
    for i in reversed(range(len(cache["stages"]))):
        st = cache["stages"][i]
        drelu = _maxpool_backward(dh, st["idx"], st["orig_hw"])
        dconv = drelu * (st["relu"] > 0)
        w = params[f"conv{i}/w"]
        pad = KERNEL // 2
        xp = np.pad(st["x"], ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
        grads[f"conv{i}/w"] = np.tensordot(dconv, win, axes=([0, 2, 3], [0, 2, 3]))
        grads[f"conv{i}/b"] = dconv.sum(axis=(0, 2, 3))
        if i > 0:
            wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dh = _conv_same(dconv, wt, None)
    return grads


def forward_batch(params: ParameterSet, specs: Sequence[Spectrogram] | np.ndarray) -> np.ndarray:
    """Embeddings for a batch; order preserved, elementwise equal to forward."""
    if isinstance(specs, np.ndarray):
        x = specs
    else:
        x = np.stack([s.data for s in specs])
    z, _ = forward_batch_cached(params, x)
    return z


def forward(params: ParameterSet, spec: Spectrogram) -> np.ndarray:
    """Unit-norm embedding of one spectrogram."""
    return forward_batch(params, spec.data[None])[0]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u . v / (|u| |v|), in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2]. The verification metric throughout."""
    return 1.0 - cosine_similarity(a, b)


def assert_unit_norm(v: np.ndarray, tol: float = 1e-6, what: str = "embedding") -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{what} norm {norm} deviates from 1 by more than {tol}")


@dataclass(frozen=True)
class GaitModel:
    """A trained encoder bundled with the signal geometry it was trained on."""

    params: ParameterSet
    enc_cfg: EncoderConfig
    stft_cfg: StftConfig = field(default_factory=StftConfig)

    def embed_specs(self, specs: np.ndarray) -> np.ndarray:
        if specs.shape[1:] != self.enc_cfg.input_shape:
            raise ValueError(
                f"spectrogram shape {specs.shape[1:]} does not match "
                f"model input {self.enc_cfg.input_shape}"
            )
        return forward_batch(self.params, specs)

    def embed_series(
        self, series: AccelSeries, window_sec: float, overlap_frac: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Window a session, spectrogram and embed every window.

        Returns (embeddings (n, D), window intervals (n, 2) in seconds).
        """
        mag = signal.magnitude(series)
        specs, intervals = signal.spectrogram_windows(
            mag, window_sec, overlap_frac, self.stft_cfg
        )
        if not specs:
            raise ValueError(
                f"session of {mag.values.size / mag.fs:.1f}s yields no "
                f"{window_sec:g}s windows"
            )
        return self.embed_specs(np.stack([s.data for s in specs])), intervals
