"""Self-similarity matrices of skeleton sequences."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton import SkeletonSequence

METRICS = ("l1", "l2")


@dataclass(frozen=True, eq=False)
class SelfSimilarityMatrix:
    """``values[p, q]``: mean per-joint distance between frames p and q."""

    values: np.ndarray
    metric: str = "l2"

    @property
    def size(self) -> int:
        return self.values.shape[0]


def pairwise_frame_distances(data: np.ndarray, metric: str = "l2") -> np.ndarray:
    """SSM values for ``data[joint, frame, dim]``.

    Only the strict upper triangle is evaluated; the lower half is its mirror,
    so symmetry and the zero diagonal hold exactly.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    n, t, _ = data.shape
    if t == 0:
        raise ValueError("cannot build a self-similarity matrix of zero frames")
    p, q = np.triu_indices(t, k=1)
    diff = data[:, p, :] - data[:, q, :]
    if metric == "l2":
        dist = np.sqrt(np.einsum("npc,npc->np", diff, diff))
    else:
        dist = np.abs(diff).sum(axis=2)
    upper = dist.sum(axis=0) / n
    out = np.zeros((t, t))
    out[p, q] = upper
    out[q, p] = upper
    return out


def compute_ssm(seq: SkeletonSequence, metric: str = "l2") -> SelfSimilarityMatrix:
    return SelfSimilarityMatrix(pairwise_frame_distances(seq.data, metric), metric)


def validate_ssm(ssm, tol: float = 1e-12) -> list[str]:
    """Describe every structural problem; an empty list means the matrix is a
    finite, non-negative, hollow symmetric square."""
    values = np.asarray(ssm.values if isinstance(ssm, SelfSimilarityMatrix) else ssm, dtype=np.float64)
    problems = []
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        return [f"not square: shape {values.shape}"]
    finite = np.isfinite(values)
    if not finite.all():
        problems.append(f"non-finite entries at {np.argwhere(~finite)[:5].tolist()}")
    v = np.where(finite, values, 0.0)
    asym = np.abs(v - v.T)
    if asym.max(initial=0.0) > tol:
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        problems.append(f"asymmetric: |S[{i},{j}] - S[{j},{i}]| = {asym[i, j]:.3g}")
    diag = np.diag(v)
    if np.any(diag != 0):
        problems.append(f"nonzero diagonal at {np.flatnonzero(diag).tolist()[:5]}")
    if np.any(v < 0):
        problems.append(f"negative entries at {np.argwhere(v < 0)[:5].tolist()}")
    return problems


def resize_ssm(ssm: SelfSimilarityMatrix, stride_history) -> SelfSimilarityMatrix:
    """Keep every s-th row and column, s the product of the strides so far."""
    s = int(np.prod(list(stride_history) or [1]))
    if s == 1:
        return ssm
    return SelfSimilarityMatrix(ssm.values[::s, ::s].copy(), ssm.metric)


def to_pgm_bytes(values: np.ndarray) -> bytes:
    """8-bit binary PGM, min-max scaled; a constant matrix maps to black."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = (values.min(), values.max()) if values.size else (0.0, 0.0)
    if hi > lo:
        pixels = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        pixels = np.zeros_like(values)
    h, w = values.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    body = raw[len(raw) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def export_ssm(ssm: SelfSimilarityMatrix, path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(repr(float(v)) for v in row) for row in ssm.values]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "pgm":
        path.write_bytes(to_pgm_bytes(ssm.values))
    else:
        raise ValueError(f"format must be csv or pgm, got {fmt!r}")
    return path


def read_ssm_csv(path, metric: str = "l2") -> SelfSimilarityMatrix:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    values = np.array([[float(v) for v in row.split(",")] for row in rows]).reshape(len(rows), -1)
    return SelfSimilarityMatrix(values, metric)
