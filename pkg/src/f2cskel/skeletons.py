"""Skeleton sequence I/O: dataset parsers, splits, caching, synthetic data.

Sequences are held as immutable ``(T, S, J, 3)`` float32 arrays where ``S`` is
the number of retained subject slots (at most two). A subject is "present" in
a frame iff its joint block contains any nonzero coordinate; frames with no
tracked bodies keep their row of zeros so temporal segmentation downstream
sees the full recording length.
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .body import chain_body
from .errors import ConfigError, FormatError, ParseError, TooShortError

NTU_JOINTS = 25
SBU_JOINTS = 15

# Training subjects of the standard cross-subject evaluation protocol.
CS_TRAIN_SUBJECTS = frozenset(
    {1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38}
)

# The 21 participant pairs of the SBU corpus and their published five-fold
# grouping (fold index per pair, aligned with SBU_PAIRS).
SBU_PAIRS = (
    "s01s02", "s01s03", "s01s07", "s02s01", "s02s03", "s02s06", "s02s07",
    "s03s02", "s03s04", "s03s05", "s03s06", "s04s02", "s04s03", "s04s06",
    "s05s02", "s05s03", "s06s02", "s06s03", "s06s04", "s07s01", "s07s03",
)
SBU_FOLDS = (
    ("s01s02", "s03s04", "s05s02", "s06s04"),
    ("s02s03", "s02s07", "s03s05", "s05s03"),
    ("s01s03", "s01s07", "s07s01", "s07s03"),
    ("s02s01", "s02s06", "s03s02", "s03s06"),
    ("s04s02", "s04s03", "s04s06", "s06s02", "s06s03"),
)

NTU_NAME_RE = re.compile(
    r"S(?P<setup>\d{3})C(?P<camera>\d{3})P(?P<subject>\d{3})R(?P<rep>\d{3})A(?P<action>\d{3})"
)

CACHE_MAGIC = b"F2CS"
CACHE_VERSION = 1


@dataclass(frozen=True)
class SkeletonSequence:
    """One recording: per-frame 3D joints for up to two subjects plus metadata."""

    name: str
    joints: np.ndarray  # (T, S, J, 3) float32, write-protected
    label: int
    subject_id: int = 0
    camera_id: int = 0
    setup_id: int = 0
    replication_id: int = 0

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float32)
        if joints.ndim != 4 or joints.shape[3] != 3:
            raise ValueError(f"joints must be (T, S, J, 3), got {joints.shape}")
        if joints.shape[0] < 3:
            raise TooShortError(
                f"sequence {self.name!r} has {joints.shape[0]} frames, need at least 3"
            )
        if not (1 <= joints.shape[1] <= 2):
            raise ValueError(f"subject arity must be 1 or 2, got {joints.shape[1]}")
        if not np.isfinite(joints).all():
            raise ValueError(f"sequence {self.name!r} contains non-finite coordinates")
        joints = joints.copy()
        joints.flags.writeable = False
        object.__setattr__(self, "joints", joints)

    @property
    def frame_count(self) -> int:
        return self.joints.shape[0]

    @property
    def arity(self) -> int:
        return self.joints.shape[1]

    @property
    def joint_count(self) -> int:
        return self.joints.shape[2]

    def present(self) -> np.ndarray:
        """(T, S) mask: subject slot holds a tracked body in that frame."""
        return np.any(self.joints != 0.0, axis=(2, 3))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    test: tuple[str, ...]


# --------------------------------------------------------------------------
# NTU parsing

def parse_ntu_filename(name: str) -> dict[str, int]:
    m = NTU_NAME_RE.search(Path(name).stem)
    if not m:
        raise ParseError(f"cannot extract SsssCcccPpppRrrrAaaa ids from {name!r}")
    return {
        "setup_id": int(m.group("setup")),
        "camera_id": int(m.group("camera")),
        "subject_id": int(m.group("subject")),
        "replication_id": int(m.group("rep")),
        "label": int(m.group("action")) - 1,
    }


class _Lines:
    """Line reader that tracks 1-based line numbers for error reporting."""

    def __init__(self, text: str):
        self._lines = text.splitlines()
        self.pos = 0

    def next(self, what: str) -> str:
        while self.pos < len(self._lines):
            line = self._lines[self.pos]
            self.pos += 1
            if line.strip():
                return line
        raise ParseError(f"unexpected end of file while reading {what}", line=self.pos)

    def rest_is_blank(self) -> bool:
        return all(not line.strip() for line in self._lines[self.pos:])


def _parse_int(token: str, what: str, line: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"non-integer {what}: {token!r}", line=line) from None


def _parse_floats(tokens: list[str], what: str, line: int) -> list[float]:
    out = []
    for tok in tokens:
        try:
            out.append(float(tok))
        except ValueError:
            raise ParseError(f"non-numeric {what}: {tok!r}", line=line) from None
    return out


def parse_ntu_file(data: bytes | str, name: str) -> SkeletonSequence:
    """Parse one `.skeleton` text file.

    Layout: frame count; per frame a body count; per body one metadata line
    (body id + 9 state fields), a joint-count line, then 25 lines of 12
    floats of which only x y z are kept. At most two bodies are retained,
    ranked by total joint displacement over the sequence (actors move more
    than bystanders); matching across frames uses the file's body id.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="strict")
    lines = _Lines(data)

    line = lines.next("frame count")
    frame_count = _parse_int(line.strip(), "frame count", lines.pos)
    if frame_count < 3:
        raise TooShortError(f"{frame_count} frames declared, need at least 3", line=lines.pos)

    # body id -> list of (frame index, (J, 3) float32)
    tracks: dict[str, list[tuple[int, np.ndarray]]] = {}
    first_seen: dict[str, int] = {}
    for t in range(frame_count):
        line = lines.next("body count")
        body_count = _parse_int(line.strip(), "body count", lines.pos)
        if body_count < 0:
            raise ParseError(f"negative body count {body_count}", line=lines.pos)
        for _ in range(body_count):
            meta = lines.next("body metadata").split()
            if len(meta) != 10:
                raise ParseError(
                    f"body metadata needs 10 fields (id + 9 state), got {len(meta)}",
                    line=lines.pos,
                )
            body_id = meta[0]
            _parse_floats(meta[1:], "body state field", lines.pos)
            line = lines.next("joint count")
            joint_count = _parse_int(line.strip(), "joint count", lines.pos)
            if joint_count != NTU_JOINTS:
                raise ParseError(
                    f"inconsistent joint count {joint_count}, expected {NTU_JOINTS}",
                    line=lines.pos,
                )
            joints = np.empty((NTU_JOINTS, 3), dtype=np.float32)
            for j in range(NTU_JOINTS):
                fields = lines.next("joint record").split()
                if len(fields) != 12:
                    raise ParseError(
                        f"joint record needs 12 fields, got {len(fields)}", line=lines.pos
                    )
                values = _parse_floats(fields, "joint field", lines.pos)
                xyz = values[:3]
                if not all(np.isfinite(v) for v in xyz):
                    raise ParseError(f"non-finite joint position {xyz}", line=lines.pos)
                joints[j] = xyz
            tracks.setdefault(body_id, []).append((t, joints))
            first_seen.setdefault(body_id, t)
    if not lines.rest_is_blank():
        raise ParseError("trailing content after declared frames", line=lines.pos + 1)

    retained = _rank_bodies(tracks, first_seen)[:2]
    arity = max(1, len(retained))
    out = np.zeros((frame_count, arity, NTU_JOINTS, 3), dtype=np.float32)
    for slot, body_id in enumerate(retained):
        for t, joints in tracks[body_id]:
            out[t, slot] = joints

    meta_ids = parse_ntu_filename(name)
    return SkeletonSequence(name=Path(name).stem, joints=out, **meta_ids)


def _rank_bodies(
    tracks: dict[str, list[tuple[int, np.ndarray]]], first_seen: dict[str, int]
) -> list[str]:
    """Body ids by descending motion energy; ties by appearance order, then id."""

    def energy(appearances: list[tuple[int, np.ndarray]]) -> float:
        total = 0.0
        for (_, prev), (_, cur) in zip(appearances, appearances[1:]):
            total += float(np.linalg.norm(cur - prev, axis=1).sum())
        return total

    return sorted(tracks, key=lambda b: (-energy(tracks[b]), first_seen[b], b))


# --------------------------------------------------------------------------
# SBU parsing

def parse_sbu_file(data: bytes | str, pair: str, action: int, take: int) -> SkeletonSequence:
    """Parse one SBU skeleton CSV: per row a frame index then 2 x 15 x 3 floats.

    Coordinates are kept exactly as stored; the parser applies no unit
    conversion.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="strict")
    rows: list[np.ndarray] = []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = [tok.strip() for tok in raw.split(",")]
        if len(fields) != 1 + 2 * SBU_JOINTS * 3:
            raise ParseError(
                f"row has {len(fields)} fields, expected {1 + 2 * SBU_JOINTS * 3}",
                line=lineno,
            )
        values = _parse_floats(fields, "coordinate", lineno)
        coords = np.asarray(values[1:], dtype=np.float32).reshape(2, SBU_JOINTS, 3)
        if not np.isfinite(coords).all():
            raise ParseError("non-finite joint position", line=lineno)
        rows.append(coords)
    if len(rows) < 3:
        raise TooShortError(f"{len(rows)} frames, need at least 3")

    pair_index = SBU_PAIRS.index(pair) if pair in SBU_PAIRS else -1
    return SkeletonSequence(
        name=f"{pair}_a{action:02d}_t{take:03d}",
        joints=np.stack(rows),
        label=action - 1,
        subject_id=pair_index,
        camera_id=0,
        setup_id=pair_index,
        replication_id=take,
    )


# --------------------------------------------------------------------------
# Blocklist

def load_blocklist(path: str | Path) -> list[str]:
    """Sample names, one per line; blank lines and '#' comments are skipped."""
    names = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return names


def filter_missing(
    sequences: Sequence[SkeletonSequence], blocklist: Iterable[str]
) -> list[SkeletonSequence]:
    """Drop sequences whose sample name is blocklisted; order preserved."""
    blocked = set(blocklist)
    return [seq for seq in sequences if seq.name not in blocked]


# --------------------------------------------------------------------------
# Splits

def split(
    sequences: Sequence[SkeletonSequence],
    protocol: str,
    seed: int = 0,
    fold: int = 0,
) -> DatasetSplit:
    """Partition sequences into train/test ids under a named protocol.

    ``cs`` and ``cv`` are the standard cross-subject / cross-view protocols;
    ``sbu-5fold`` uses the corpus's published participant-pair folds;
    ``all`` puts everything in train (desk-scale harnesses). The protocols
    are metadata-driven, so ``seed`` does not influence them.
    """
    del seed
    names = [seq.name for seq in sequences]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate sequence names; splits need unique ids")
    if protocol == "cs":
        for seq in sequences:
            if seq.subject_id < 1:
                raise ConfigError(f"sequence {seq.name!r} lacks a subject id for the cs protocol")
        train = [s.name for s in sequences if s.subject_id in CS_TRAIN_SUBJECTS]
        test = [s.name for s in sequences if s.subject_id not in CS_TRAIN_SUBJECTS]
    elif protocol == "cv":
        for seq in sequences:
            if seq.camera_id not in (1, 2, 3):
                raise ConfigError(
                    f"sequence {seq.name!r} has camera id {seq.camera_id}, cv needs 1..3"
                )
        train = [s.name for s in sequences if s.camera_id in (2, 3)]
        test = [s.name for s in sequences if s.camera_id == 1]
    elif protocol == "sbu-5fold":
        if not 0 <= fold < len(SBU_FOLDS):
            raise ConfigError(f"fold index {fold} out of range 0..{len(SBU_FOLDS) - 1}")
        fold_pairs = set(SBU_FOLDS[fold])
        train, test = [], []
        for seq in sequences:
            if not 0 <= seq.subject_id < len(SBU_PAIRS):
                raise ConfigError(
                    f"sequence {seq.name!r} lacks a participant-pair id for sbu-5fold"
                )
            pair = SBU_PAIRS[seq.subject_id]
            (test if pair in fold_pairs else train).append(seq.name)
    elif protocol == "all":
        train, test = list(names), []
    else:
        raise ConfigError(f"unknown split protocol {protocol!r}")
    return DatasetSplit(train=tuple(train), test=tuple(test))


# --------------------------------------------------------------------------
# Binary sequence cache
#
# Layout (little-endian): magic 'F2CS', version u16, J u16, T u32, arity u8,
# label u16, then subject/camera/setup/replication ids as 4 x u16, then
# T*arity*J*3 float32 joint coordinates.

_HEADER = struct.Struct("<4sHHIBHHHHH")


def save_sequence(seq: SkeletonSequence, path: str | Path) -> None:
    from .runio import atomic_write_bytes

    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            CACHE_MAGIC,
            CACHE_VERSION,
            seq.joint_count,
            seq.frame_count,
            seq.arity,
            seq.label,
            seq.subject_id,
            seq.camera_id,
            seq.setup_id,
            seq.replication_id,
        )
    )
    buf.write(np.ascontiguousarray(seq.joints, dtype="<f4").tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_sequence(path: str | Path) -> SkeletonSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated sequence cache")
    magic, version, joint_count, frame_count, arity, label, sub, cam, setup, rep = (
        _HEADER.unpack_from(raw)
    )
    if magic != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    count = frame_count * arity * joint_count * 3
    payload = raw[_HEADER.size:]
    if len(payload) != count * 4:
        raise FormatError(f"{path}: payload size {len(payload)}, expected {count * 4}")
    joints = np.frombuffer(payload, dtype="<f4").reshape(frame_count, arity, joint_count, 3)
    return SkeletonSequence(
        name=path.stem,
        joints=joints,
        label=label,
        subject_id=sub,
        camera_id=cam,
        setup_id=setup,
        replication_id=rep,
    )


# --------------------------------------------------------------------------
# Synthetic sequences

# Rest poses with strictly positive bone lengths, hip/torso-rooted.
_NTU_REST = np.array(
    [
        [0.00, 0.00, 0.0], [0.00, 0.25, 0.0], [0.00, 0.55, 0.0], [0.00, 0.70, 0.0],
        [-0.20, 0.45, 0.0], [-0.30, 0.20, 0.0], [-0.33, 0.00, 0.0], [-0.34, -0.06, 0.0],
        [0.20, 0.45, 0.0], [0.30, 0.20, 0.0], [0.33, 0.00, 0.0], [0.34, -0.06, 0.0],
        [-0.09, -0.05, 0.0], [-0.10, -0.50, 0.0], [-0.11, -0.95, 0.0], [-0.12, -1.00, 0.1],
        [0.09, -0.05, 0.0], [0.10, -0.50, 0.0], [0.11, -0.95, 0.0], [0.12, -1.00, 0.1],
        [0.00, 0.45, 0.0], [-0.35, -0.12, 0.0], [-0.30, -0.10, 0.03],
        [0.35, -0.12, 0.0], [0.30, -0.10, 0.03],
    ],
    dtype=np.float64,
)

_SBU_REST = np.array(
    [
        [0.50, 0.80, 1.0], [0.50, 0.70, 1.0], [0.50, 0.55, 1.0],
        [0.42, 0.68, 1.0], [0.38, 0.55, 1.0], [0.36, 0.42, 1.0],
        [0.58, 0.68, 1.0], [0.62, 0.55, 1.0], [0.64, 0.42, 1.0],
        [0.45, 0.40, 1.0], [0.44, 0.25, 1.0], [0.43, 0.10, 1.0],
        [0.55, 0.40, 1.0], [0.56, 0.25, 1.0], [0.57, 0.10, 1.0],
    ],
    dtype=np.float64,
)


def rest_pose(joint_count: int) -> np.ndarray:
    if joint_count == NTU_JOINTS:
        return _NTU_REST.copy()
    if joint_count == SBU_JOINTS:
        return _SBU_REST.copy()
    # Chain fallback: joints along x with a slight y zigzag so bones never
    # become collinear degenerately.
    pose = np.zeros((joint_count, 3), dtype=np.float64)
    pose[:, 0] = 0.1 * np.arange(joint_count)
    pose[:, 1] = 0.02 * (np.arange(joint_count) % 2)
    return pose


def _mean_bone_length(pose: np.ndarray, joint_count: int) -> float:
    body = chain_body(joint_count)
    lengths = [
        float(np.linalg.norm(pose[child] - pose[parent]))
        for parent, child in body.topology.edges
    ]
    return float(np.mean(lengths))


def synth_generate(
    classes: int,
    per_class: int,
    frames: int,
    joint_count: int,
    seed: int,
    subjects: int = 1,
) -> list[SkeletonSequence]:
    """Deterministic synthetic dataset with separable parametric motions.

    Class ``c`` oscillates joints sinusoidally at ``c + 1`` cycles per
    sequence, with a class-specific band of joints moving at full amplitude
    (the rest at a quarter), so classes differ both in temporal frequency and
    in which image columns carry motion. Every class shares the same mean
    joint weight, so the mean per-frame joint displacement still grows
    strictly with the class id; amplitude jitter is kept at 2%, which
    preserves a positive displacement margin between adjacent classes for up
    to ~16 classes.
    """
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("need at least 1 sequence per class")
    if frames < 3:
        raise ConfigError("need at least 3 frames")
    if not 1 <= subjects <= 2:
        raise ConfigError("subjects must be 1 or 2")

    rng = np.random.default_rng(seed)
    pose = rest_pose(joint_count)
    amplitude = 0.25 * _mean_bone_length(pose, joint_count)
    t_axis = np.arange(frames, dtype=np.float64)

    sequences: list[SkeletonSequence] = []
    index = 0
    band = max(1, joint_count // 3)
    for label in range(classes):
        freq = float(label + 1)
        # Class-specific high-amplitude joint band; identical mean weight
        # across classes keeps displacement means ordered by frequency alone.
        active = (np.arange(band) + (label * joint_count) // classes) % joint_count
        weight = np.full(joint_count, 0.25)
        weight[active] = 1.0
        for _ in range(per_class):
            joints = np.zeros((frames, subjects, joint_count, 3), dtype=np.float64)
            for s in range(subjects):
                phases = rng.uniform(0.0, 2.0 * np.pi, size=(joint_count, 3))
                amp = amplitude * (1.0 + rng.uniform(-0.02, 0.02))
                # (T, J, 3) sinusoid; each coordinate gets its own phase so
                # hip-relative motion does not cancel out.
                angle = 2.0 * np.pi * freq * t_axis[:, None, None] / frames + phases[None]
                offset = np.zeros(3)
                offset[0] = 0.8 * s  # second subject stands beside the first
                joints[:, s] = pose[None] + amp * weight[None, :, None] * np.sin(angle) + offset
                joints[:, s] += rng.normal(0.0, 0.01 * amp, size=(frames, joint_count, 3))
            sequences.append(
                SkeletonSequence(
                    name=f"synth-{seed}-{index:05d}",
                    joints=joints.astype(np.float32),
                    label=label,
                    subject_id=(index % 40) + 1,
                    camera_id=(index % 3) + 1,
                    setup_id=1,
                    replication_id=(index % 2) + 1,
                )
            )
            index += 1
    return sequences
