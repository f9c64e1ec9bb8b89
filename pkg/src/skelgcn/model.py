"""Stacked spatial-temporal graph blocks with a softmax classifier head."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gcn import (ReginaConfig, init_ssm_kernel, regina_temporal_conv, regina_weights,
                  spatial_gcn, temporal_conv_baseline)
from .graph import SpatialGraph, build_graph
from .skeleton import DEFAULT_TOPOLOGY, BoneTopology

__all__ = ["BlockSpec", "ModelConfig", "Model", "build_model", "tiny_config"]


@dataclass(frozen=True)
class BlockSpec:
    c_in: int
    c_out: int
    stride: int = 1


DEFAULT_BLOCKS = (BlockSpec(3, 16), BlockSpec(16, 32, 2), BlockSpec(32, 64))


@dataclass(frozen=True)
class ModelConfig:
    blocks: tuple[BlockSpec, ...] = DEFAULT_BLOCKS
    temporal_kernel: int = 9
    regina: ReginaConfig = field(default_factory=ReginaConfig)
    num_classes: int = 5
    in_channels: int = 3
    num_joints: int = 9
    frames: int = 64

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(
            b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks))
        if not self.blocks:
            raise ValueError("model needs at least one block")
        if self.blocks[0].c_in != self.in_channels:
            raise ValueError(f"first block takes {self.blocks[0].c_in} channels, input has {self.in_channels}")
        for i, (a, b) in enumerate(zip(self.blocks, self.blocks[1:])):
            if a.c_out != b.c_in:
                raise ValueError(f"block {i} outputs {a.c_out} channels but block {i + 1} takes {b.c_in}")
        for i, b in enumerate(self.blocks):
            if b.stride not in (1, 2):
                raise ValueError(f"block {i} stride must be 1 or 2, got {b.stride}")
            if min(b.c_in, b.c_out) < 1:
                raise ValueError(f"block {i} has a non-positive channel count")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd, got {self.temporal_kernel}")
        if self.regina.temporal_kernel != self.temporal_kernel:
            raise ValueError(f"SSM unit kernel {self.regina.temporal_kernel} differs from "
                             f"temporal_kernel {self.temporal_kernel}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.frames < 1 or self.num_joints < 1:
            raise ValueError("frames and num_joints must be positive")

    def frames_per_block(self) -> list[int]:
        """Input length seen by each block."""
        out, t = [], self.frames
        for b in self.blocks:
            out.append(t)
            t = math.ceil(t / b.stride)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        d["regina"] = ReginaConfig(**d.get("regina", {}))
        return cls(**d)


def tiny_config(regina: ReginaConfig | None = None, num_classes: int = 3) -> ModelConfig:
    """Two blocks on a 4-joint, 8-frame input, small enough for full finite differences."""
    return ModelConfig(blocks=(BlockSpec(3, 4), BlockSpec(4, 4, 2)), temporal_kernel=5,
                       regina=regina or ReginaConfig(temporal_kernel=5), num_classes=num_classes,
                       num_joints=4, frames=8)


class Model:
    """Parameters live in ``params`` (trainable tensors) and ``buffers``
    (batch-norm running statistics), both keyed by dotted names."""

    def __init__(self, config: ModelConfig, graph: SpatialGraph, seed: int = 0):
        if graph.num_joints != config.num_joints:
            raise ValueError(f"graph has {graph.num_joints} joints, config expects {config.num_joints}")
        self.config = config
        self.graph = graph
        self.training = True
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        K = config.temporal_kernel
        p = graph.normalized.shape[0]
        for i, b in enumerate(config.blocks):
            self._uniform(f"block{i}.gcn.weight", (p, b.c_in, b.c_out), p * b.c_in, rng)
            self._bn(f"block{i}.bn1", b.c_out)
            self._uniform(f"block{i}.tcn.weight", (b.c_out, b.c_out, K), b.c_out * K, rng)
            self._bn(f"block{i}.bn2", b.c_out)
        c_last = config.blocks[-1].c_out
        self._uniform("head.weight", (c_last, config.num_classes), c_last, rng)
        self.params["head.bias"] = Tensor(np.zeros(config.num_classes), requires_grad=True)
        # separate stream so toggling the SSM unit leaves every other initial value unchanged
        ssm_rng = np.random.default_rng([seed, 1])
        r = config.regina
        if r.enabled and r.learnable_conv:
            names = ["ssm_conv.kernel"] if r.shared_conv else [
                f"block{i}.ssm_conv.kernel" for i in range(len(config.blocks))]
            for name in names:
                self.params[name] = Tensor(init_ssm_kernel(r.kernel_size, ssm_rng), requires_grad=True)

    def _uniform(self, name, shape, fan_in, rng):
        bound = 1.0 / math.sqrt(fan_in)
        self.params[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    def _bn(self, name, c):
        self.params[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(c)
        self.buffers[f"{name}.running_var"] = np.ones(c)

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Every persisted array, trainable or not."""
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    def _batch_norm(self, x, name):
        return ad.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                             self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                             self.training)

    def _ssm_kernel(self, i):
        r = self.config.regina
        if not r.learnable_conv:
            return None
        return self.params["ssm_conv.kernel" if r.shared_conv else f"block{i}.ssm_conv.kernel"]

    def forward(self, x, ssm=None) -> Tensor:
        """``x`` is ``[batch, channels, frames, joints]``; ``ssm`` is ``[batch, frames, frames]``
        and required when the self-similarity unit is enabled."""
        cfg = self.config
        x = ad.as_tensor(x)
        want = (cfg.in_channels, cfg.frames, cfg.num_joints)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ValueError(f"input {x.shape} does not match [batch, {want[0]}, {want[1]}, {want[2]}]")
        b = x.shape[0]
        r = cfg.regina
        if r.enabled and not r.force_ones:
            if ssm is None:
                raise ValueError("self-similarity matrices are required when the SSM unit is enabled")
            ssm = np.asarray(ssm, dtype=np.float64)
            if ssm.shape != (b, cfg.frames, cfg.frames):
                raise ValueError(f"SSM batch {ssm.shape} does not match [{b}, {cfg.frames}, {cfg.frames}]")
        K = cfg.temporal_kernel
        scale = 1
        h = x
        for i, (blk, t_layer) in enumerate(zip(cfg.blocks, cfg.frames_per_block())):
            y = ad.relu(self._batch_norm(spatial_gcn(h, self.graph, self.params[f"block{i}.gcn.weight"]),
                                         f"block{i}.bn1"))
            w = self.params[f"block{i}.tcn.weight"]
            if not r.enabled:
                y = temporal_conv_baseline(y, w, K, blk.stride)
            else:
                if r.force_ones:
                    taps = Tensor(np.ones((b, math.ceil(t_layer / blk.stride), K)))
                else:
                    s = ssm if scale == 1 else ssm[:, ::scale, ::scale]
                    taps = regina_weights(s, self._ssm_kernel(i), K, blk.stride, t_layer)
                y = regina_temporal_conv(y, taps, w, K, blk.stride)
            y = ad.relu(self._batch_norm(y, f"block{i}.bn2"))
            if blk.stride == 1 and blk.c_in == blk.c_out:
                y = ad.add(y, h)
            h = y
            scale *= blk.stride
        pooled = ad.mean(h, axes=(2, 3))                                  # [b, c]
        return ad.add(ad.matmul(pooled, self.params["head.weight"]), self.params["head.bias"])

    __call__ = forward


def build_model(config: ModelConfig, graph: SpatialGraph | BoneTopology | None = None,
                seed: int = 0) -> Model:
    if graph is None:
        graph = DEFAULT_TOPOLOGY
    if isinstance(graph, BoneTopology):
        graph = build_graph(graph)
    return Model(config, graph, seed)
