"""Graph and temporal convolutions on ``[batch, channels, frames, joints]`` maps.

The temporal unit can weight every tap of its kernel by a map learned from
the sequence's self-similarity matrix: ``R[b, tau, d]`` scales the sample that
tap ``d`` reads for output frame ``tau``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import SpatialGraph
from .ssm import SelfSimilarityMatrix, resize_ssm

__all__ = [
    "ReginaConfig", "spatial_gcn", "temporal_conv_baseline", "regina_weights",
    "regina_temporal_conv", "resize_ssm_for_layer", "tap_indices", "init_ssm_kernel",
]


@dataclass(frozen=True)
class ReginaConfig:
    """Switches for the self-similarity weighted temporal unit.

    ``learnable_conv=False`` feeds the raw (resized) SSM as tap weights;
    ``shared_conv`` uses one SSM kernel for every block; ``force_ones``
    replaces the weights with the constant 1 (equivalence checks only).
    """

    enabled: bool = True
    kernel_size: int = 3
    temporal_kernel: int = 9
    stride: int = 1
    learnable_conv: bool = True
    shared_conv: bool = False
    force_ones: bool = False

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd, got {self.temporal_kernel}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")

    def to_dict(self) -> dict:
        return asdict(self)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected [batch, channels, frames, joints], got {x.shape}")
    return x, False


def spatial_gcn(x: Tensor, graph: SpatialGraph | np.ndarray, weights: Tensor) -> Tensor:
    """Sum over partitions of ``A_p_normalized @ X @ W_p`` applied per frame.

    ``x`` is ``[batch, c_in, t, n]`` (batch optional), ``weights`` is
    ``[P, c_in, c_out]``.
    """
    adj = graph.normalized if isinstance(graph, SpatialGraph) else np.asarray(graph)
    x, squeeze = _batched(x)
    b, c, t, n = x.shape
    p = adj.shape[0]
    if adj.shape != (p, n, n):
        raise ValueError(f"adjacency {adj.shape} does not match {n} joints")
    if weights.ndim != 3 or weights.shape[:2] != (p, c):
        raise ValueError(f"weights {weights.shape} do not match [{p}, {c}, c_out]")
    c_out = weights.shape[2]
    # column block p holds A_p^T, so X @ adj_cat aggregates neighbours for every partition
    adj_cat = Tensor(np.concatenate([a.T for a in adj], axis=1))
    agg = ad.matmul(x, adj_cat)                                     # [b, c, t, p*n]
    agg = ad.permute(ad.reshape(agg, (b, c, t, p, n)), (0, 3, 1, 2, 4))
    agg = ad.reshape(agg, (b, p * c, t * n))
    w = ad.permute(ad.reshape(weights, (p * c, c_out)), (1, 0))     # [c_out, p*c]
    y = ad.reshape(ad.matmul(w, agg), (b, c_out, t, n))
    return ad.reshape(y, y.shape[1:]) if squeeze else y


def _out_frames(t: int, stride: int) -> int:
    return -(-t // stride)


def _temporal(x: Tensor, weights: Tensor, kernel: int, stride: int, tap_weights: Tensor | None) -> Tensor:
    x, squeeze = _batched(x)
    b, c, t, n = x.shape
    if kernel % 2 == 0:
        raise ValueError(f"temporal kernel must be odd, got {kernel}")
    if weights.shape[1:] != (c, kernel):
        raise ValueError(f"weights {weights.shape} do not match [c_out, {c}, {kernel}]")
    c_out = weights.shape[0]
    r = (kernel - 1) // 2
    t_out = _out_frames(t, stride)
    span = stride * (t_out - 1) + 1
    xp = ad.pad(x, 2, r, r)
    rw = None
    if tap_weights is not None:
        rw = tap_weights if tap_weights.ndim == 3 else ad.reshape(tap_weights, (1,) + tap_weights.shape)
        if rw.shape[1:] != (t_out, kernel) or rw.shape[0] not in (1, b):
            raise ValueError(f"tap weights {tap_weights.shape} do not match [{b}, {t_out}, {kernel}]")
    taps = [ad.reshape(ad.slice(xp, 2, d, d + span, stride), (b, 1, c, t_out, n))
            for d in range(kernel)]
    stacked = ad.concat(taps, 1)                                    # [b, K, c, t_out, n]
    if rw is not None:
        r_b = ad.reshape(ad.permute(rw, (0, 2, 1)), (rw.shape[0], kernel, 1, t_out, 1))
        stacked = ad.hadamard(stacked, r_b)
    stacked = ad.reshape(stacked, (b, kernel * c, t_out * n))
    w = ad.reshape(ad.permute(weights, (0, 2, 1)), (c_out, kernel * c))
    y = ad.reshape(ad.matmul(w, stacked), (b, c_out, t_out, n))
    return ad.reshape(y, y.shape[1:]) if squeeze else y


def temporal_conv_baseline(x: Tensor, weights: Tensor, kernel: int = 9, stride: int = 1) -> Tensor:
    """Per-joint 1-D convolution along frames, zero padded, ``weights`` is
    ``[c_out, c_in, kernel]``; output has ``ceil(t / stride)`` frames."""
    return _temporal(x, weights, kernel, stride, None)


def regina_temporal_conv(x: Tensor, tap_weights: Tensor, weights: Tensor, kernel: int = 9,
                         stride: int = 1) -> Tensor:
    """The baseline temporal convolution with tap ``d`` of output frame ``tau``
    scaled by ``tap_weights[..., tau, d]`` (broadcast over channels and joints)."""
    return _temporal(x, weights, kernel, stride, as_tensor(tap_weights))


def as_tensor(x) -> Tensor:
    return ad.as_tensor(x.values if isinstance(x, SelfSimilarityMatrix) else x)


def tap_indices(t: int, kernel: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column SSM indices read by each (output frame, tap); columns clamp
    at the sequence ends."""
    r = (kernel - 1) // 2
    centers = np.arange(0, t, stride)
    rows = np.repeat(centers[:, None], kernel, axis=1)
    cols = np.clip(centers[:, None] + np.arange(-r, r + 1)[None, :], 0, t - 1)
    return rows, cols


def regina_weights(ssm, conv_kernel: Tensor | None, kernel: int, stride: int, t_layer: int) -> Tensor:
    """Tap weights ``[..., ceil(t/stride), kernel]`` from an SSM of size ``t_layer``.

    The SSM is smoothed by a same-size 2-D convolution with ``conv_kernel``
    (skipped when None), then row ``tau`` and column ``tau + d`` are read for
    each output frame and tap.
    """
    s = as_tensor(ssm)
    if s.shape[-2:] != (t_layer, t_layer):
        raise ValueError(f"SSM of shape {s.shape} does not match layer length {t_layer}")
    m = ad.conv2d(s, conv_kernel) if conv_kernel is not None else s
    rows, cols = tap_indices(t_layer, kernel, stride)
    return ad.gather2d(m, rows, cols)


def resize_ssm_for_layer(ssm, stride_history):
    """Subsample an SSM (object or ``[..., t, t]`` array) by the cumulative stride."""
    if isinstance(ssm, SelfSimilarityMatrix):
        return resize_ssm(ssm, stride_history)
    s = int(np.prod(list(stride_history) or [1]))
    return ssm if s == 1 else ssm[..., ::s, ::s]


def init_ssm_kernel(k: int, rng: np.random.Generator) -> np.ndarray:
    """Centre tap 1, others 0, plus uniform noise of 0.01."""
    w = rng.uniform(-0.01, 0.01, (k, k))
    w[k // 2, k // 2] += 1.0
    return w
