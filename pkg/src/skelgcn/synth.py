"""Parametric synthetic skeleton actions on the 9-joint default body.

A desk-scale stand-in for a motion-capture corpus: every class is a simple
kinematic pattern, and subjects, cameras and repetitions perturb it.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .skeleton import (DEFAULT_TOPOLOGY, DatasetManifest, ManifestItem, SkeletonSequence,
                       make_manifest, save_manifest, save_sequence)

# bone offsets from the source joint, metres, y up, body facing +z
_REST_OFFSETS = np.array([
    [0.0, 1.0, 0.0],     # pelvis (absolute)
    [0.0, 0.5, 0.0],     # spine
    [0.0, 0.25, 0.0],    # head
    [0.2, -0.25, 0.0],   # l_elbow
    [0.0, -0.25, 0.0],   # l_hand
    [-0.2, -0.25, 0.0],  # r_elbow
    [0.0, -0.25, 0.0],   # r_hand
    [0.15, -0.95, 0.0],  # l_foot
    [-0.15, -0.95, 0.0],  # r_foot
])
_UPPER_BODY = [1, 2, 3, 4, 5, 6]


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    # one matrix per frame; positive angle tips +y towards +z
    return np.stack([np.stack([np.ones_like(a), 0 * a, 0 * a], -1),
                     np.stack([0 * a, c, -s], -1),
                     np.stack([0 * a, s, c], -1)], -2)


def _forward_kinematics(offsets: np.ndarray) -> np.ndarray:
    """``offsets[t, joint]`` relative to the parent joint -> absolute positions."""
    pos = np.empty_like(offsets)
    pos[:, 0] = offsets[:, 0]
    for i, j in DEFAULT_TOPOLOGY.edges:  # breadth-first, parents come first
        pos[:, j] = pos[:, i] + offsets[:, j]
    return pos


def _still(off, phase, amp, progress):
    return off


def _wave(off, phase, amp, progress):
    # right arm raised sideways, forearm swinging
    off[:, 5] = [-0.22, 0.12, 0.0]
    theta = 0.6 * amp * np.sin(phase)
    off[:, 6] = 0.25 * np.stack([-np.sin(theta), np.cos(theta), 0 * theta], -1)
    return off


def _jump(off, phase, amp, progress):
    off[:, 0, 1] += 0.12 * amp * np.sin(phase)
    return off


def _bow(off, phase, amp, progress):
    # upper body pitches forward about the pelvis, ramping up then holding
    angle = 0.9 * amp * np.clip(progress / 0.7, 0.0, 1.0)
    rot = _rot_x(angle)
    for j in _UPPER_BODY:
        off[:, j] = np.einsum("tij,tj->ti", rot, off[:, j])
    return off


def _kick(off, phase, amp, progress):
    angle = 0.7 * amp * np.sin(phase)
    off[:, 8] = np.einsum("tij,tj->ti", _rot_x(angle), off[:, 8])
    return off


def _clap(off, phase, amp, progress):
    closing = 0.5 * (1 - np.cos(phase)) * amp
    off[:, 3, 2] = off[:, 5, 2] = 0.15
    off[:, 4] = np.stack([-0.18 * closing, 0.05 + 0 * closing, 0.2 + 0 * closing], -1)
    off[:, 6] = np.stack([0.18 * closing, 0.05 + 0 * closing, 0.2 + 0 * closing], -1)
    return off


def _squat(off, phase, amp, progress):
    depth = 0.25 * amp * 0.5 * (1 - np.cos(phase))
    off[:, 0, 1] -= depth
    off[:, 7, 1] += depth
    off[:, 8, 1] += depth
    return off


def _punch(off, phase, amp, progress):
    reach = 0.5 * (1 + np.sin(phase)) * amp
    off[:, 5] = [-0.2, -0.05, 0.1]
    off[:, 6] = np.stack([0 * reach, 0.05 + 0 * reach, 0.1 + 0.3 * reach], -1)
    return off


MOTIONS = {
    "still": _still, "wave": _wave, "jump": _jump, "bow": _bow, "kick": _kick,
    "clap": _clap, "squat": _squat, "punch": _punch,
}


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 5
    subjects: int = 8
    cameras: int = 2
    reps: int = 10
    frames: int = 64
    noise_std: float = 0.01
    seed: int = 0
    cycles: float = 2.0

    def __post_init__(self):
        if self.classes < 2 or self.subjects < 2 or self.cameras < 2:
            raise ValueError("need at least 2 classes, 2 subjects and 2 cameras")
        if self.classes > len(MOTIONS):
            raise ValueError(f"at most {len(MOTIONS)} classes available")
        if self.reps < 1 or self.frames < 1:
            raise ValueError("reps and frames must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def class_names(self) -> list[str]:
        return list(MOTIONS)[: self.classes]


def animate(motion: str, frames: int, tempo: float = 1.0, phase0: float = 0.0,
            amp: float = 1.0, cycles: float = 2.0) -> np.ndarray:
    """Noise-free ``[frames, 9, 3]`` joint positions of one motion."""
    frame = np.arange(frames, dtype=np.float64)
    progress = tempo * frame / max(frames - 1, 1)
    phase = 2 * np.pi * cycles * tempo * frame / frames + phase0
    off = np.broadcast_to(_REST_OFFSETS, (frames,) + _REST_OFFSETS.shape).copy()
    off = MOTIONS[motion](off, phase, amp, progress)
    return _forward_kinematics(off)


def _yaw(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return points @ rot.T


def sample_name(label: int, subject: int, camera: int, rep: int) -> str:
    return f"S{subject:03d}C{camera:03d}R{rep:03d}A{label:03d}"


def generate(config: SynthConfig) -> tuple[DatasetManifest, list[SkeletonSequence]]:
    """Build every (class, subject, camera, rep) sequence; pure in ``config``."""
    rng = np.random.default_rng(config.seed)
    scales = rng.uniform(0.85, 1.15, config.subjects)
    tempos = rng.uniform(0.8, 1.2, config.subjects)
    yaws = rng.uniform(-np.pi / 4, np.pi / 4, config.cameras)

    items, seqs = [], []
    for label, motion in enumerate(config.class_names):
        for s in range(config.subjects):
            for cam in range(config.cameras):
                for rep in range(config.reps):
                    sub_rng = np.random.default_rng([config.seed, label, s, cam, rep])
                    phase0 = sub_rng.uniform(0, 2 * np.pi)
                    amp = sub_rng.uniform(0.9, 1.1)
                    pos = animate(motion, config.frames, tempos[s], phase0, amp, config.cycles)
                    pos = _yaw(pos * scales[s], yaws[cam])
                    if config.noise_std > 0:
                        pos = pos + sub_rng.normal(0.0, config.noise_std, pos.shape)
                    name = sample_name(label, s + 1, cam + 1, rep + 1)
                    seqs.append(SkeletonSequence(np.transpose(pos, (1, 0, 2)), label=label,
                                                 subject_id=s + 1, camera_id=cam + 1))
                    items.append(ManifestItem(f"{name}.json", label, s + 1, cam + 1))
    return make_manifest(items, "xsub"), seqs


def write_dataset(out_dir, config: SynthConfig, split: str = "xsub") -> DatasetManifest:
    """Write one JSON file per sequence plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, seqs = generate(config)
    manifest = manifest.resplit(split)
    for item, seq in zip(manifest.items, seqs):
        save_sequence(out / item.path, seq)
    save_manifest(out / "manifest.json", manifest)
    manifest.root = out
    return manifest


def config_dict(config: SynthConfig) -> dict:
    return asdict(config)
