"""Geometric feature grids from skeleton sequences.

Per frame and subject a skeleton is re-expressed relative to reference joints
(hip for whole-body features; head/shoulders/hips for body-part features),
optionally after limb normalization, and stacked over time into a ``(T, W, 3)``
grid of 3-vectors.

Numerical discipline: all geometry runs in float64, and relative positions are
always obtained as differences of root-relative coordinates. Because the
stored sequences are float32, differences of translated inputs round to the
same float64 values as differences of the originals, so global translations
leave grids bit-identical (provided the translation itself was exact in
float32, e.g. lattice-valued test data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, BoneTopology
from .errors import ConfigError
from .skeletons import SkeletonSequence

GRID_KINDS = ("position", "velocity")
GRID_BASES = ("wb", "bp")


@dataclass(frozen=True)
class FeatureGrid:
    """T x W lattice of 3-vectors; rows are frames, columns are joint slots."""

    values: np.ndarray
    kind: str
    basis: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ValueError(f"grid values must be (T, W, 3), got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("grid contains non-finite values")
        if self.kind not in GRID_KINDS:
            raise ValueError(f"kind must be one of {GRID_KINDS}, got {self.kind!r}")
        if self.basis not in GRID_BASES:
            raise ValueError(f"basis must be one of {GRID_BASES}, got {self.basis!r}")
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BoneLengthTable:
    """Mean length per topology edge, estimated on the training split."""

    lengths: np.ndarray  # aligned with BoneTopology.edges

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.float64)
        if lengths.ndim != 1:
            raise ValueError("lengths must be a flat per-edge array")
        if not np.isfinite(lengths).all() or (lengths <= 0).any():
            raise ValueError("every bone length must be positive and finite")
        object.__setattr__(self, "lengths", lengths)


def relative_positions(frame_joints: np.ndarray, ref: int) -> np.ndarray:
    """Joint positions minus the reference joint's position (zero at the ref)."""
    joints = np.asarray(frame_joints, dtype=np.float64)
    if not 0 <= ref < joints.shape[0]:
        raise ValueError(f"reference joint {ref} out of range for {joints.shape[0]} joints")
    return joints - joints[ref]


def velocities(rel_positions: np.ndarray) -> np.ndarray:
    """Central differences over time: v(t) = p(t+1) - p(t-1), rows 1..T-2.

    The two boundary frames have no central difference, so the result has
    T - 2 rows; no padding rows are fabricated.
    """
    grid = np.asarray(rel_positions, dtype=np.float64)
    if grid.shape[0] < 3:
        raise ValueError(f"need at least 3 frames for velocities, got {grid.shape[0]}")
    return grid[2:] - grid[:-2]


def mean_bone_lengths(
    train_sequences: list[SkeletonSequence], topology: BoneTopology
) -> BoneLengthTable:
    """Average per-edge bone length over all training frames and present subjects."""
    if not train_sequences:
        raise ConfigError("cannot build a bone-length table from an empty training set")
    parents = np.array([edge[0] for edge in topology.edges])
    children = np.array([edge[1] for edge in topology.edges])
    total = np.zeros(len(topology.edges), dtype=np.float64)
    count = 0
    for seq in train_sequences:
        present = seq.present()
        frames = seq.joints[present].astype(np.float64)  # (K, J, 3)
        if frames.size == 0:
            continue
        diffs = frames[:, children] - frames[:, parents]
        total += np.linalg.norm(diffs, axis=2).sum(axis=0)
        count += frames.shape[0]
    if count == 0:
        raise ConfigError("training set has no frames with present subjects")
    means = total / count
    if (means == 0).any():
        bad = [topology.edges[i] for i in np.nonzero(means == 0)[0]]
        raise ConfigError(f"degenerate training data: zero mean length for edges {bad}")
    return BoneLengthTable(lengths=means)


def _normalized_root_relative(
    frames: np.ndarray, topology: BoneTopology, table: BoneLengthTable
) -> np.ndarray:
    """Limb-normalized skeletons in root-relative coordinates, batched over frames.

    Walking the tree parent-first, each child sits at parent + L * u where u is
    the unit vector of the original bone and L its table length; zero-length
    bones contribute a zero direction (child collapses onto its parent).
    """
    rel = np.zeros_like(frames)
    edge_index = {edge: i for i, edge in enumerate(topology.edges)}
    for parent, child in topology.children_first_order():
        d = frames[:, child] - frames[:, parent]
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        u = np.divide(d, norm, out=np.zeros_like(d), where=norm > 0)
        rel[:, child] = rel[:, parent] + table.lengths[edge_index[(parent, child)]] * u
    return rel


def limb_normalize(
    frame_joints: np.ndarray, topology: BoneTopology, table: BoneLengthTable
) -> np.ndarray:
    """Rescale every bone to its table length, keeping all joint angles.

    The root joint keeps its original position; everything else is re-placed
    by walking the tree.
    """
    joints = np.asarray(frame_joints, dtype=np.float64)
    rel = _normalized_root_relative(joints[None], topology, table)[0]
    return rel + joints[topology.root]


def _subject_block(
    seq: SkeletonSequence, slot: int, body: BodyModel, table: BoneLengthTable | None
) -> tuple[np.ndarray, np.ndarray]:
    """(present mask, per-frame joints) for one subject slot, normalized if a table is given.

    With a table the returned coordinates are root-relative; without one they
    are raw. Either way downstream only ever uses differences, so the
    distinction never leaks out.
    """
    mask = seq.present()[:, slot]
    frames = seq.joints[mask, slot].astype(np.float64)
    if table is not None and frames.size:
        frames = _normalized_root_relative(frames, body.topology, table)
    return mask, frames


def _block_grid(
    seq: SkeletonSequence,
    body: BodyModel,
    table: BoneLengthTable | None,
    refs: tuple[int, ...],
    basis: str,
) -> tuple[FeatureGrid, FeatureGrid]:
    if seq.joint_count != body.joint_count:
        raise ConfigError(
            f"sequence {seq.name!r} has {seq.joint_count} joints, body model expects"
            f" {body.joint_count}"
        )
    T, J = seq.frame_count, body.joint_count
    order = list(body.chain.order)
    pos = np.zeros((T, len(refs) * 2 * J, 3), dtype=np.float64)
    for slot in range(min(2, seq.arity)):
        mask, frames = _subject_block(seq, slot, body, table)
        if not mask.any():
            continue
        for r, ref in enumerate(refs):
            rel = frames - frames[:, ref][:, None, :]
            block = np.zeros((T, J, 3), dtype=np.float64)
            block[mask] = rel[:, order]
            col = (r * 2 + slot) * J
            pos[:, col:col + J] = block
    vel = velocities(pos)
    return (
        FeatureGrid(values=pos, kind="position", basis=basis),
        FeatureGrid(values=vel, kind="velocity", basis=basis),
    )


def build_wb_grid(
    seq: SkeletonSequence,
    body: BodyModel,
    table: BoneLengthTable | None,
) -> tuple[FeatureGrid, FeatureGrid]:
    """Whole-body grids: every joint relative to its own subject's hip.

    Columns are subject 0's joints in chain order, then subject 1's; an absent
    subject contributes zero 3-vectors. Width is 2J. Passing ``table=None``
    skips limb normalization.
    """
    return _block_grid(seq, body, table, (body.refs.wb_ref,), basis="wb")


def build_bp_grid(
    seq: SkeletonSequence,
    body: BodyModel,
    table: BoneLengthTable | None,
) -> tuple[FeatureGrid, FeatureGrid]:
    """Body-part grids: one block per reference joint, side by side.

    Block order is head, left shoulder, right shoulder, left hip, right hip;
    within a block the two subject sub-blocks sit side by side, joints in
    chain order. Width is 5 * 2 * J.
    """
    return _block_grid(seq, body, table, tuple(body.refs.bp_refs), basis="bp")
