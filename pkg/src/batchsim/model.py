"""Declarative articulation description and its loader/validator.

Models are described by a JSON-compatible document with top-level keys
``links``, ``joints``, ``tendons``, and ``fixed_base``. Units are meters,
kilograms, and radians. See docs/model_schema.md for the full schema.

A loaded :class:`ArticulationModel` is immutable and safe to share across
workers. DOF ordering is depth-first over the joint tree, parent before
child, children in declaration order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spatial import Transform

JOINT_DOF_COUNT = {"fixed": 0, "revolute": 1, "prismatic": 1, "spherical": 3}


class ModelError(ValueError):
    pass


class CycleError(ModelError):
    pass


class MissingLink(ModelError):
    pass


class NonPositiveMass(ModelError):
    pass


class BadLimits(ModelError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    kind: str  # sphere | capsule | box | none
    params: tuple  # sphere: (r,); capsule: (r, half_height); box: (hx, hy, hz)
    offset: tuple = (0.0, 0.0, 0.0)  # shape center in link frame

    def __post_init__(self):
        if self.kind not in ("sphere", "capsule", "box", "none"):
            raise ModelError(f"unknown shape kind {self.kind!r}")
        if any(p <= 0 for p in self.params):
            raise ModelError("shape dimensions must be positive")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    inertia: tuple  # principal moments (Ixx, Iyy, Izz)
    shape: ShapeSpec | None = None
    collision: bool = True

    def __post_init__(self):
        if not (self.mass > 0):
            raise NonPositiveMass(f"link {self.name!r}: mass must be > 0")
        if any(i <= 0 for i in self.inertia):
            raise NonPositiveMass(f"link {self.name!r}: inertia must be > 0")


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str  # fixed | revolute | prismatic | spherical
    parent: str
    child: str
    axis: tuple = (0.0, 0.0, 1.0)
    origin_pos: tuple = (0.0, 0.0, 0.0)  # joint frame in the parent link frame
    origin_quat: tuple = (0.0, 0.0, 0.0, 1.0)
    child_pos: tuple = (0.0, 0.0, 0.0)  # joint frame in the child link frame
    child_quat: tuple = (0.0, 0.0, 0.0, 1.0)
    limits: tuple | None = None  # (lo, hi) rad or m
    stiffness: float = 0.0
    damping: float = 0.0
    armature: float = 0.0
    friction: float = 0.0

    def __post_init__(self):
        if self.kind not in JOINT_DOF_COUNT:
            raise ModelError(f"unknown joint kind {self.kind!r}")
        if self.limits is not None and self.limits[0] > self.limits[1]:
            raise BadLimits(f"joint {self.name!r}: lo > hi")
        for g in (self.stiffness, self.damping, self.armature, self.friction):
            if g < 0:
                raise ModelError(f"joint {self.name!r}: gains must be >= 0")

    @property
    def dof_count(self) -> int:
        return JOINT_DOF_COUNT[self.kind]


@dataclass(frozen=True)
class TendonJoint:
    dof: str  # joint name (one DOF axis)
    coefficient: float
    parent: int  # index of parent tendon joint within the tendon, -1 for root


@dataclass(frozen=True)
class TendonAttachment:
    link: str
    offset: tuple  # point in link frame
    weight: float
    parent: int  # index of parent attachment, -1 for root


@dataclass(frozen=True)
class TendonSpec:
    name: str
    kind: str  # fixed | spatial
    rest_length: float = 0.0
    stiffness: float = 0.0
    damping: float = 0.0
    limits: tuple | None = None
    limit_stiffness: float = 0.0
    joints: tuple = ()  # TendonJoint, fixed tendons
    attachments: tuple = ()  # TendonAttachment, spatial tendons


@dataclass(frozen=True)
class ArticulationModel:
    name: str
    links: tuple  # LinkSpec, index 0 is the base link
    joints: tuple  # JointSpec in depth-first order, joints[i] parents links[i+1]
    fixed_base: bool
    tendons: tuple = ()
    sensor_links: tuple = ()  # link names carrying a 6-axis force sensor
    num_bodies: int = field(init=False, default=0)
    num_dofs: int = field(init=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "num_bodies", len(self.links))
        object.__setattr__(self, "num_dofs", sum(j.dof_count for j in self.joints))

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise MissingLink(name)

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise ModelError(f"unknown joint {name!r}")


def dof_index_map(model: ArticulationModel):
    """Contiguous DOF offsets per joint, fixed joints omitted.

    Returns a list of (joint name, offset) in depth-first joint order.
    """
    out = []
    offset = 0
    for j in model.joints:
        if j.dof_count:
            out.append((j.name, offset))
            offset += j.dof_count
    return out


def _as_transform(entry) -> tuple:
    pos = tuple(float(x) for x in entry.get("pos", (0.0, 0.0, 0.0)))
    quat = tuple(float(x) for x in entry.get("quat", (0.0, 0.0, 0.0, 1.0)))
    return pos, quat


def load_model(document) -> ArticulationModel:
    """Load and validate a model from a dict, JSON string, or file path."""
    if isinstance(document, (str, bytes)):
        s = document if isinstance(document, str) else document.decode()
        if s.lstrip().startswith("{"):
            doc = json.loads(s)
        else:
            with open(s) as f:
                doc = json.load(f)
    else:
        doc = document

    name = doc.get("name", "model")
    links = []
    for entry in doc["links"]:
        shape = None
        if "shape" in entry:
            se = entry["shape"]
            shape = ShapeSpec(
                kind=se["kind"],
                params=tuple(float(p) for p in se["params"]),
                offset=tuple(float(x) for x in se.get("offset", (0.0, 0.0, 0.0))),
            )
        links.append(
            LinkSpec(
                name=entry["name"],
                mass=float(entry["mass"]),
                inertia=tuple(float(i) for i in entry["inertia"]),
                shape=shape,
                collision=bool(entry.get("collision", True)),
            )
        )
    link_names = [l.name for l in links]
    if len(set(link_names)) != len(link_names):
        raise ModelError("duplicate link names")

    joints = []
    for entry in doc.get("joints", ()):
        pos, quat = _as_transform(entry.get("origin", {}))
        cpos, cquat = _as_transform(entry.get("child_origin", {}))
        axis = entry.get("axis", (0.0, 0.0, 1.0))
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ModelError(f"joint {entry['name']!r}: zero axis")
        joints.append(
            JointSpec(
                name=entry["name"],
                kind=entry["kind"],
                parent=entry["parent"],
                child=entry["child"],
                axis=tuple(axis / n),
                origin_pos=pos,
                origin_quat=quat,
                child_pos=cpos,
                child_quat=cquat,
                limits=tuple(entry["limits"]) if entry.get("limits") else None,
                stiffness=float(entry.get("stiffness", 0.0)),
                damping=float(entry.get("damping", 0.0)),
                armature=float(entry.get("armature", 0.0)),
                friction=float(entry.get("friction", 0.0)),
            )
        )

    for j in joints:
        if j.parent not in link_names:
            raise MissingLink(j.parent)
        if j.child not in link_names:
            raise MissingLink(j.child)

    # Tree validation: every link except the root has exactly one incoming joint.
    incoming = {}
    for j in joints:
        if j.child in incoming:
            raise CycleError(f"link {j.child!r} has multiple incoming joints")
        incoming[j.child] = j
    roots = [n for n in link_names if n not in incoming]
    if len(roots) != 1:
        raise CycleError(f"expected exactly one root link, found {roots}")
    root = roots[0]

    # Depth-first ordering, parent before child, children in declaration order.
    children = {n: [] for n in link_names}
    for j in joints:
        children[j.parent].append(j)
    ordered_links = []
    ordered_joints = []
    by_name = {l.name: l for l in links}
    stack = [root]
    while stack:
        n = stack.pop()
        ordered_links.append(by_name[n])
        for j in reversed(children[n]):
            stack.append(j.child)
    if len(ordered_links) != len(links):
        raise CycleError("joint graph is not connected (cycle or orphan subtree)")
    # Joints in depth-first order of their child links.
    order = {l.name: i for i, l in enumerate(ordered_links)}
    ordered_joints = sorted(joints, key=lambda j: order[j.child])
    for j in ordered_joints:
        if order[j.parent] >= order[j.child]:
            raise CycleError(f"joint {j.name!r} does not point away from the root")

    joint_names = {j.name for j in ordered_joints}
    tendons = []
    for entry in doc.get("tendons", ()):
        kind = entry["kind"]
        tjoints = []
        attachments = []
        if kind == "fixed":
            for tj in entry["joints"]:
                if tj["dof"] not in joint_names:
                    raise ModelError(f"tendon references unknown joint {tj['dof']!r}")
                tjoints.append(TendonJoint(tj["dof"], float(tj["coefficient"]), int(tj.get("parent", -1))))
        elif kind == "spatial":
            for at in entry["attachments"]:
                if at["link"] not in link_names:
                    raise MissingLink(at["link"])
                attachments.append(
                    TendonAttachment(at["link"], tuple(float(x) for x in at.get("offset", (0, 0, 0))),
                                     float(at.get("weight", 1.0)), int(at.get("parent", -1)))
                )
            if len(attachments) < 2:
                raise ModelError("spatial tendon needs at least two attachments")
        else:
            raise ModelError(f"unknown tendon kind {kind!r}")
        tendons.append(
            TendonSpec(
                name=entry.get("name", f"tendon{len(tendons)}"),
                kind=kind,
                rest_length=float(entry.get("rest_length", 0.0)),
                stiffness=float(entry.get("stiffness", 0.0)),
                damping=float(entry.get("damping", 0.0)),
                limits=tuple(entry["limits"]) if entry.get("limits") else None,
                limit_stiffness=float(entry.get("limit_stiffness", 0.0)),
                joints=tuple(tjoints),
                attachments=tuple(attachments),
            )
        )

    sensors = tuple(doc.get("sensors", ()))
    for s in sensors:
        if s not in link_names:
            raise MissingLink(s)

    return ArticulationModel(
        name=name,
        links=tuple(ordered_links),
        joints=tuple(ordered_joints),
        fixed_base=bool(doc.get("fixed_base", False)),
        tendons=tuple(tendons),
        sensor_links=sensors,
    )


def joint_origin(j: JointSpec) -> Transform:
    return Transform(np.array(j.origin_pos), np.array(j.origin_quat))
