"""Skeleton layout: bone topology, joint-chain ordering, reference joints.

A :class:`BodyModel` bundles everything the feature stage needs to know about
a skeleton family (joint count, kinematic tree, the five-part joint chain,
and the whole-body / body-part reference joints). The NTU (25-joint) and SBU
(15-joint) models ship as versioned config files under ``data/`` so
alternative mappings can be swapped in without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import configfile
from .errors import ConfigError

PART_NAMES = ("left_arm", "right_arm", "torso", "left_leg", "right_leg")


@dataclass(frozen=True)
class BoneTopology:
    """Kinematic tree as (parent, child) edges rooted at the hip-like joint."""

    root: int
    edges: tuple[tuple[int, int], ...]

    def validate(self, joint_count: int) -> None:
        if len(self.edges) != joint_count - 1:
            raise ConfigError(
                f"topology has {len(self.edges)} edges, expected {joint_count - 1}"
            )
        parent_of: dict[int, int] = {}
        for parent, child in self.edges:
            if not (0 <= parent < joint_count and 0 <= child < joint_count):
                raise ConfigError(f"edge ({parent},{child}) out of range for J={joint_count}")
            if child in parent_of:
                raise ConfigError(f"joint {child} has two parents")
            parent_of[child] = parent
        if self.root in parent_of:
            raise ConfigError(f"root {self.root} must not have a parent")
        # Connectivity: every joint must reach the root without cycles.
        for joint in range(joint_count):
            seen = set()
            cur = joint
            while cur != self.root:
                if cur in seen or cur not in parent_of:
                    raise ConfigError(f"joint {joint} does not reach root {self.root}")
                seen.add(cur)
                cur = parent_of[cur]

    def children_first_order(self) -> tuple[tuple[int, int], ...]:
        """Edges ordered so each parent is placed before its children."""
        by_parent: dict[int, list[tuple[int, int]]] = {}
        for parent, child in self.edges:
            by_parent.setdefault(parent, []).append((parent, child))
        ordered: list[tuple[int, int]] = []
        stack = [self.root]
        while stack:
            joint = stack.pop()
            for edge in by_parent.get(joint, []):
                ordered.append(edge)
                stack.append(edge[1])
        return tuple(ordered)


@dataclass(frozen=True)
class JointChain:
    """Five-part joint ordering: left arm, right arm, torso, left leg, right leg."""

    parts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.parts) != len(PART_NAMES):
            raise ConfigError(f"joint chain needs {len(PART_NAMES)} parts, got {len(self.parts)}")

    @property
    def order(self) -> tuple[int, ...]:
        out: list[int] = []
        for part in self.parts:
            out.extend(part)
        return tuple(out)

    def validate(self, joint_count: int) -> None:
        order = self.order
        if sorted(order) != list(range(joint_count)):
            raise ConfigError(
                f"joint chain is not a permutation of 0..{joint_count - 1}: {order}"
            )


@dataclass(frozen=True)
class ReferenceJointSet:
    """Hip-like whole-body origin plus the five body-part reference joints.

    ``bp_refs`` order is fixed: head, left shoulder, right shoulder,
    left hip, right hip.
    """

    wb_ref: int
    bp_refs: tuple[int, int, int, int, int]

    def validate(self, joint_count: int) -> None:
        if not 0 <= self.wb_ref < joint_count:
            raise ConfigError(f"wb_ref {self.wb_ref} out of range")
        if len(self.bp_refs) != 5 or len(set(self.bp_refs)) != 5:
            raise ConfigError(f"bp_refs must be five distinct joints, got {self.bp_refs}")
        for ref in self.bp_refs:
            if not 0 <= ref < joint_count:
                raise ConfigError(f"bp_ref {ref} out of range")


@dataclass(frozen=True)
class BodyModel:
    name: str
    joint_count: int
    topology: BoneTopology
    chain: JointChain
    refs: ReferenceJointSet

    def validate(self) -> None:
        self.topology.validate(self.joint_count)
        self.chain.validate(self.joint_count)
        self.refs.validate(self.joint_count)


def body_from_config(cfg: dict[str, str], source: str = "<config>") -> BodyModel:
    joint_count = configfile.get_int(cfg, "joint_count", source)
    parts = tuple(
        tuple(configfile.get_int_list(cfg, f"part_{part}", source)) for part in PART_NAMES
    )
    edges = []
    for tok in cfg.get("edges", "").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            child_s, parent_s = tok.split(":")
            edges.append((int(parent_s), int(child_s)))
        except ValueError:
            raise ConfigError(f"{source}: bad edge token {tok!r}, expected child:parent") from None
    body = BodyModel(
        name=cfg.get("body", "custom"),
        joint_count=joint_count,
        topology=BoneTopology(root=configfile.get_int(cfg, "root", source), edges=tuple(edges)),
        chain=JointChain(parts=parts),
        refs=ReferenceJointSet(
            wb_ref=configfile.get_int(cfg, "wb_ref", source),
            bp_refs=tuple(configfile.get_int_list(cfg, "bp_refs", source)),
        ),
    )
    body.validate()
    return body


def load_body_config(path: str | Path) -> BodyModel:
    cfg = configfile.load_config(path, schema="body", version=1)
    return body_from_config(cfg, source=str(path))


def _load_bundled(name: str) -> BodyModel:
    with resources.as_file(resources.files("f2cskel").joinpath("data", name)) as path:
        return load_body_config(path)


def ntu_body() -> BodyModel:
    """25-joint Kinect-v2 body used by NTU-style recordings."""
    return _load_bundled("ntu_body.cfg")


def sbu_body() -> BodyModel:
    """15-joint body used by SBU-style two-person recordings."""
    return _load_bundled("sbu_body.cfg")


def chain_body(joint_count: int) -> BodyModel:
    """Procedural fallback for synthetic skeletons with a nonstandard joint count.

    Joints form a single chain rooted at 0; the chain is cut into five
    contiguous parts, each part's first joint doubling as its reference.
    """
    if joint_count == 25:
        return ntu_body()
    if joint_count == 15:
        return sbu_body()
    if joint_count < 5:
        raise ConfigError(f"need at least 5 joints for a five-part chain, got {joint_count}")
    edges = tuple((j - 1, j) for j in range(1, joint_count))
    base, extra = divmod(joint_count, 5)
    parts: list[tuple[int, ...]] = []
    start = 0
    for i in range(5):
        size = base + (1 if i < extra else 0)
        parts.append(tuple(range(start, start + size)))
        start += size
    refs = tuple(part[0] for part in parts)
    body = BodyModel(
        name=f"chain{joint_count}",
        joint_count=joint_count,
        topology=BoneTopology(root=0, edges=edges),
        chain=JointChain(parts=tuple(parts)),
        refs=ReferenceJointSet(wb_ref=0, bp_refs=refs),  # type: ignore[arg-type]
    )
    body.validate()
    return body


def body_for_kind(kind: str, joint_count: int | None = None) -> BodyModel:
    if kind == "ntu":
        return ntu_body()
    if kind == "sbu":
        return sbu_body()
    if kind == "synth":
        if joint_count is None:
            raise ConfigError("synthetic body needs an explicit joint count")
        return chain_body(joint_count)
    raise ConfigError(f"unknown dataset kind {kind!r}")
