"""Skeleton sequences: data model, NTU ingestion, preprocessing, bone stream
and the JSON sequence / manifest formats."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """A sequence or manifest file does not match its format."""


class ParseError(ValueError):
    """A .skeleton text file is truncated or malformed."""


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """Joint coordinates of one body, stored as ``data[joint, frame, dim]``."""

    data: np.ndarray
    label: int = -1
    subject_id: int = 0
    camera_id: int = 0
    stream: str = "joint"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"sequence data must be n x t x c, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("sequence contains non-finite coordinates")
        if self.stream not in ("joint", "bone"):
            raise ValueError(f"unknown stream {self.stream!r}")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, **changes) -> "SkeletonSequence":
        return replace(self, data=data, **changes)

    def __eq__(self, other):
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (self.label == other.label and self.subject_id == other.subject_id
                and self.camera_id == other.camera_id and self.stream == other.stream
                and self.data.shape == other.data.shape and np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class BoneTopology:
    """A skeleton tree; ``edges`` are ``(source, target)`` pairs directed away
    from ``center_joint`` so every other joint is the target of one edge."""

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int
    names: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = self.num_joints
        if not 0 <= self.center_joint < n:
            raise ValueError(f"center joint {self.center_joint} outside 0..{n - 1}")
        targets = [j for _, j in self.edges]
        if len(self.edges) != n - 1 or sorted(targets) != sorted(set(range(n)) - {self.center_joint}):
            raise ValueError("edges must give every non-center joint exactly one source")
        if self.names and len(self.names) != n:
            raise ValueError("names must cover every joint")
        # every joint must reach the center by following sources
        parent = {j: i for i, j in self.edges}
        for j in range(n):
            seen, k = set(), j
            while k != self.center_joint:
                if k in seen:
                    raise ValueError("edges contain a cycle")
                seen.add(k)
                k = parent[k]

    @classmethod
    def from_undirected(cls, num_joints: int, edges, center_joint: int, names=()) -> "BoneTopology":
        """Orient an undirected edge list away from ``center_joint``."""
        adj: dict[int, list[int]] = {i: [] for i in range(num_joints)}
        for a, b in edges:
            if not (0 <= a < num_joints and 0 <= b < num_joints) or a == b:
                raise ValueError(f"bad edge ({a}, {b})")
            adj[a].append(b)
            adj[b].append(a)
        if len(edges) != num_joints - 1:
            raise ValueError("a tree on n joints has n - 1 edges")
        oriented, seen = [], {center_joint}
        queue = deque([center_joint])
        while queue:
            i = queue.popleft()
            for j in sorted(adj[i]):
                if j in seen:
                    continue
                seen.add(j)
                oriented.append((i, j))
                queue.append(j)
        if len(seen) != num_joints:
            raise ValueError("skeleton graph is not connected")
        return cls(num_joints, tuple(oriented), center_joint, tuple(names))

    def parents(self) -> np.ndarray:
        """Source joint for each joint; the center maps to itself."""
        p = np.arange(self.num_joints)
        for i, j in self.edges:
            p[j] = i
        return p


DEFAULT_JOINTS = ("pelvis", "spine", "head", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_foot", "r_foot")

# pelvis-centred 9-joint body used by the synthetic generator
DEFAULT_TOPOLOGY = BoneTopology.from_undirected(
    9, [(0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)], 0, DEFAULT_JOINTS)

# Kinect v2 25-joint layout of NTU RGB+D (1-based ids in the dataset docs)
_NTU_EDGES_1BASED = [(1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
                     (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
                     (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
                     (24, 25), (25, 12)]
NTU_TOPOLOGY = BoneTopology.from_undirected(
    25, [(a - 1, b - 1) for a, b in _NTU_EDGES_1BASED], 20)


# ---------------------------------------------------------------- NTU .skeleton

def parse_ntu_skeleton(text: str, num_joints: int | None = None) -> list[SkeletonSequence]:
    """Parse an NTU RGB+D ``.skeleton`` file, one sequence per tracked body.

    Bodies are keyed by the body id at the start of their metadata line and
    returned in order of first appearance; a body's sequence holds only the
    frames in which it was tracked.  Only x, y, z of each joint are kept.
    """
    lines = text.splitlines()
    pos = 0

    def next_line(what: str) -> str:
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ParseError(f"truncated file: expected {what} at line {pos + 1}")
        pos += 1
        return lines[pos - 1]

    def to_int(s: str, what: str) -> int:
        try:
            return int(s.split()[0])
        except (ValueError, IndexError):
            raise ParseError(f"line {pos}: non-numeric {what} {s!r}") from None

    if not text.strip():
        raise ParseError("truncated/empty file")
    n_frames = to_int(next_line("frame count"), "frame count")
    if n_frames <= 0:
        raise ParseError("truncated/empty file: no frames declared")

    bodies: dict[str, list[np.ndarray]] = {}
    for _ in range(n_frames):
        n_bodies = to_int(next_line("body count"), "body count")
        for _ in range(n_bodies):
            meta = next_line("body metadata").split()
            body_id = meta[0] if meta else ""
            declared = to_int(next_line("joint count"), "joint count")
            if num_joints is not None and declared != num_joints:
                raise ParseError(f"line {pos}: joint count {declared} != expected {num_joints}")
            joints = np.empty((declared, 3))
            for j in range(declared):
                fields = next_line(f"joint {j}").split()
                if len(fields) < 3:
                    raise ParseError(f"line {pos}: joint line has fewer than 3 fields")
                try:
                    joints[j] = [float(v) for v in fields[:3]]
                except ValueError:
                    raise ParseError(f"line {pos}: non-numeric joint coordinate") from None
            frames = bodies.setdefault(body_id, [])
            if frames and frames[0].shape[0] != declared:
                raise ParseError(f"line {pos}: body {body_id} changed joint count")
            frames.append(joints)

    return [SkeletonSequence(np.stack(frames, axis=1)) for frames in bodies.values()]


def read_ntu_skeleton(path, num_joints: int | None = 25) -> list[SkeletonSequence]:
    path = Path(path)
    try:
        return parse_ntu_skeleton(path.read_text(), num_joints)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- preprocessing

def normalize_temporal(seq: SkeletonSequence, length: int = 64) -> SkeletonSequence:
    """Loop-pad short sequences from the start, truncate long ones."""
    if seq.t == 0:
        raise ValueError("cannot normalize an empty sequence")
    if seq.t == length:
        return seq
    idx = np.arange(length) % seq.t
    return seq.with_data(seq.data[:, idx, :])


def center_sequence(seq: SkeletonSequence, topology: BoneTopology) -> SkeletonSequence:
    """Translate so the center joint of the first frame sits at the origin."""
    origin = seq.data[topology.center_joint, 0, :]
    return seq.with_data(seq.data - origin)


def to_bone_stream(seq: SkeletonSequence, topology: BoneTopology) -> SkeletonSequence:
    """Replace each joint by its bone vector (target minus source); the center
    joint gets the empty bone."""
    if seq.stream == "bone":
        raise ValueError("sequence is already a bone stream")
    if seq.n != topology.num_joints:
        raise ValueError(f"sequence has {seq.n} joints, topology {topology.num_joints}")
    bones = np.zeros_like(seq.data)
    for i, j in topology.edges:
        bones[j] = seq.data[j] - seq.data[i]
    return seq.with_data(bones, stream="bone")


# ---------------------------------------------------------------- JSON formats

_SEQ_KEYS = ("joints", "frames", "dims", "stream", "label", "subject", "camera", "data")


def sequence_to_json(seq: SkeletonSequence) -> str:
    if not np.all(np.isfinite(seq.data)):
        raise ValueError("refusing to serialize non-finite coordinates")
    doc = {
        "joints": seq.n, "frames": seq.t, "dims": seq.c, "stream": seq.stream,
        "label": int(seq.label), "subject": int(seq.subject_id), "camera": int(seq.camera_id),
        "data": np.transpose(seq.data, (1, 0, 2)).tolist(),
    }
    return json.dumps(doc, allow_nan=False) + "\n"


def sequence_from_json(text: str) -> SkeletonSequence:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed sequence JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("sequence JSON must be an object")
    missing = [k for k in _SEQ_KEYS if k not in doc]
    if missing:
        raise SchemaError(f"sequence JSON missing field(s): {', '.join(missing)}")
    try:
        data = np.asarray(doc["data"], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("sequence data is not a rectangular numeric array") from None
    t, n, c = doc["frames"], doc["joints"], doc["dims"]
    if data.shape != (t, n, c):
        # empty sequences lose their inner extents in a nested list
        if not (t == 0 and data.size == 0):
            raise SchemaError(f"data extents {data.shape} != declared (frames, joints, dims) {(t, n, c)}")
        data = np.zeros((t, n, c))
    try:
        return SkeletonSequence(np.transpose(data, (1, 0, 2)), label=int(doc["label"]),
                                subject_id=int(doc["subject"]), camera_id=int(doc["camera"]),
                                stream=doc["stream"])
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def save_sequence(path, seq: SkeletonSequence) -> None:
    Path(path).write_text(sequence_to_json(seq))


def load_sequence(path) -> SkeletonSequence:
    path = Path(path)
    try:
        return sequence_from_json(path.read_text())
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class ManifestItem:
    path: str
    label: int
    subject: int
    camera: int

    @property
    def sample_id(self) -> str:
        return Path(self.path).stem


@dataclass
class DatasetManifest:
    """Sequence files plus a cross-subject or cross-view partition."""

    split: str
    train_ids: list[int]
    test_ids: list[int]
    items: list[ManifestItem]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.split not in ("xsub", "xview"):
            raise SchemaError(f"unknown split {self.split!r}")
        if set(self.train_ids) & set(self.test_ids):
            raise SchemaError("train and test ids overlap")
        key = self._key
        unassigned = {key(it) for it in self.items} - set(self.train_ids) - set(self.test_ids)
        if unassigned:
            raise SchemaError(f"ids {sorted(unassigned)} are in neither partition")

    @property
    def _key(self):
        return (lambda it: it.subject) if self.split == "xsub" else (lambda it: it.camera)

    def partition(self, subset: str) -> list[ManifestItem]:
        if subset not in ("train", "test"):
            raise ValueError(f"subset must be train or test, got {subset!r}")
        ids = set(self.train_ids if subset == "train" else self.test_ids)
        return [it for it in self.items if self._key(it) in ids]

    def resplit(self, split: str) -> "DatasetManifest":
        """Same items under another split, using the default id assignment."""
        if split == self.split:
            return self
        return make_manifest(self.items, split, root=self.root)

    def resolve(self, item: ManifestItem) -> Path:
        p = Path(item.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def to_json(self) -> str:
        doc = {
            "split": self.split, "train_ids": list(self.train_ids), "test_ids": list(self.test_ids),
            "items": [{"path": it.path, "label": it.label, "subject": it.subject, "camera": it.camera}
                      for it in self.items],
        }
        return json.dumps(doc, indent=1) + "\n"


def make_manifest(items, split: str = "xsub", root=None) -> DatasetManifest:
    """Cross-subject: the lower half of the sorted subject ids train.
    Cross-view: the lowest camera id is held out for testing."""
    items = list(items)
    if split == "xsub":
        ids = sorted({it.subject for it in items})
        cut = (len(ids) + 1) // 2
        train, test = ids[:cut], ids[cut:]
    elif split == "xview":
        ids = sorted({it.camera for it in items})
        train, test = ids[1:], ids[:1]
    else:
        raise ValueError(f"unknown split {split!r}")
    return DatasetManifest(split, train, test, items, root=Path(root) if root is not None else None)


def save_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(manifest.to_json())


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed manifest: {exc}") from None
    for key in ("split", "train_ids", "test_ids", "items"):
        if key not in doc:
            raise SchemaError(f"{path}: manifest missing {key!r}")
    try:
        items = [ManifestItem(str(d["path"]), int(d["label"]), int(d["subject"]), int(d["camera"]))
                 for d in doc["items"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: bad manifest item: {exc}") from None
    return DatasetManifest(doc["split"], [int(i) for i in doc["train_ids"]],
                           [int(i) for i in doc["test_ids"]], items, root=path.parent)
