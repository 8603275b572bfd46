"""Fixture builders shared across test modules."""

import numpy as np

from f2cskel.skeletons import SkeletonSequence


def render_ntu_text(frames, body_ids=None, joint_count=25, declared_frames=None):
    """Render the NTU .skeleton text layout from an array of per-body joints.

    ``frames`` is a list; each entry is a dict body_id -> (J, 3) array (or an
    empty dict for a bodiless frame).
    """
    lines = [str(declared_frames if declared_frames is not None else len(frames))]
    for frame in frames:
        lines.append(str(len(frame)))
        for body_id, joints in frame.items():
            lines.append(f"{body_id} 0 0 0 0 0 0 0 0 2")
            lines.append(str(joint_count))
            for j in range(joints.shape[0]):
                x, y, z = (float(v) for v in joints[j])
                lines.append(f"{x!r} {y!r} {z!r} 0 0 0 0 0 0 0 0 2")
    return "\n".join(lines) + "\n"


def render_sbu_csv(joints):
    """(T, 2, 15, 3) array -> SBU CSV text."""
    rows = []
    for t in range(joints.shape[0]):
        coords = np.asarray(joints[t]).reshape(-1)
        rows.append(",".join([str(t + 1)] + [f"{v:.6f}" for v in coords]))
    return "\n".join(rows) + "\n"


def make_sequence(joints, name="seq", label=0, **meta):
    return SkeletonSequence(name=name, joints=np.asarray(joints, dtype=np.float32),
                            label=label, **meta)


def lattice_joints(rng, shape, step=2.0 ** -10, span=2048):
    """Random coordinates on a power-of-two lattice (exact under translation)."""
    ticks = rng.integers(-span, span + 1, size=shape)
    return (ticks * step).astype(np.float32)
