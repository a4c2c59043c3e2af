"""Bundled articulation models used by the environments and tests.

All builders return validated :class:`ArticulationModel` instances. Geometry
is deliberately simple (spheres, capsules, boxes) so every model works with
the plane and sphere-sphere collision paths.
"""

from __future__ import annotations

import numpy as np

from .model import ArticulationModel, load_model


def _sphere_inertia(m, r):
    i = 0.4 * m * r * r
    return (i, i, i)


def _box_inertia(m, hx, hy, hz):
    return (
        m * (hy * hy + hz * hz) / 3.0,
        m * (hx * hx + hz * hz) / 3.0,
        m * (hx * hx + hy * hy) / 3.0,
    )


def _capsule_inertia(m, r, hh):
    # Cylinder approximation is fine at this scale.
    ixx = m * (3 * r * r + (2 * hh) ** 2) / 12.0
    return (ixx, ixx, 0.5 * m * r * r)


def free_sphere(radius=0.1, mass=1.0, collision=True) -> ArticulationModel:
    return load_model({
        "name": "free_sphere",
        "links": [{
            "name": "ball", "mass": mass, "inertia": _sphere_inertia(mass, radius),
            "shape": {"kind": "sphere", "params": [radius]},
            "collision": collision,
        }],
    })


def free_box(half_extents=(0.1, 0.1, 0.1), mass=1.0) -> ArticulationModel:
    hx, hy, hz = half_extents
    return load_model({
        "name": "free_box",
        "links": [{
            "name": "box", "mass": mass, "inertia": _box_inertia(mass, hx, hy, hz),
            "shape": {"kind": "box", "params": [hx, hy, hz]},
            "collision": True,
        }],
    })


def flyer(mass=1.5, arm=0.2) -> ArticulationModel:
    """Single-body rotorcraft; thrust is applied as body forces at the rotor
    offsets (+-arm on x), so the model itself has no DOFs."""
    return load_model({
        "name": "flyer",
        "links": [{
            "name": "chassis", "mass": mass,
            "inertia": _box_inertia(mass, 0.15, 0.15, 0.05),
            "shape": {"kind": "sphere", "params": [0.15]},
            "collision": False,
        }],
    })


FLYER_ROTOR_OFFSETS = ((0.2, 0.0, 0.05), (-0.2, 0.0, 0.05))


def pendulum(length=1.0, mass=1.0) -> ArticulationModel:
    """Fixed-base pendulum hinged at the anchor; the bob link frame sits at
    its center of mass, half a length below the hinge at q = 0."""
    return load_model({
        "name": "pendulum",
        "fixed_base": True,
        "links": [
            {"name": "anchor", "mass": 1.0, "inertia": [1.0, 1.0, 1.0], "collision": False},
            {"name": "bob", "mass": mass,
             "inertia": _capsule_inertia(mass, 0.02, length / 2),
             "shape": {"kind": "sphere", "params": [0.05], "offset": [0, 0, -length / 2]},
             "collision": False},
        ],
        "joints": [{
            "name": "hinge", "kind": "revolute", "parent": "anchor", "child": "bob",
            "axis": [0, 1, 0],
            "child_origin": {"pos": [0, 0, length / 2]},
        }],
    })


def cartpole(cart_mass=1.0, pole_mass=0.2, pole_length=1.0) -> ArticulationModel:
    return load_model({
        "name": "cartpole",
        "fixed_base": True,
        "links": [
            {"name": "rail", "mass": 1.0, "inertia": [1.0, 1.0, 1.0], "collision": False},
            {"name": "cart", "mass": cart_mass,
             "inertia": _box_inertia(cart_mass, 0.1, 0.1, 0.05), "collision": False},
            {"name": "pole", "mass": pole_mass,
             "inertia": _capsule_inertia(pole_mass, 0.02, pole_length / 2),
             "collision": False},
        ],
        "joints": [
            {"name": "slider", "kind": "prismatic", "parent": "rail", "child": "cart",
             "axis": [1, 0, 0], "limits": [-4.0, 4.0],
             "origin": {"pos": [0, 0, 1.0]}},
            {"name": "hinge", "kind": "revolute", "parent": "cart", "child": "pole",
             "axis": [0, 1, 0],
             "origin": {"pos": [0, 0, 0.06]},
             "child_origin": {"pos": [0, 0, -pole_length / 2]}},
        ],
    })


def chain3(link_mass=0.5, link_len=0.3) -> ArticulationModel:
    """Three-link fixed-base chain of y-axis hinges, used for solver
    convergence checks."""
    links = [{"name": "base", "mass": 1.0, "inertia": [1.0, 1.0, 1.0], "collision": False}]
    joints = []
    parent = "base"
    for i in range(3):
        name = f"link{i}"
        links.append({
            "name": name, "mass": link_mass,
            "inertia": _capsule_inertia(link_mass, 0.02, link_len / 2),
            "collision": False,
        })
        joints.append({
            "name": f"hinge{i}", "kind": "revolute", "parent": parent, "child": name,
            "axis": [0, 1, 0],
            "origin": {"pos": [0, 0, -link_len / 2] if i else [0, 0, 0]},
            "child_origin": {"pos": [0, 0, link_len / 2]},
        })
        parent = name
    return load_model({"name": "chain3", "fixed_base": True,
                       "links": links, "joints": joints})


def _quadruped_doc(legs, torso_radius, torso_mass, upper_len, lower_len,
                   foot_radius, name, gains):
    """Shared scaffolding for the two walker models. ``legs`` is a list of
    (leg name, planar direction d_i). One hip rotates about z, the knee about
    the in-plane tangent t_i = z x d_i; three-joint variants add an abduction
    hinge about d_i before the hip."""
    stiffness, damping = gains
    links = [{
        "name": "torso", "mass": torso_mass,
        "inertia": _sphere_inertia(torso_mass, torso_radius),
        "shape": {"kind": "sphere", "params": [torso_radius]},
    }]
    joints = []
    three = name != "quadruped"
    for leg, d in legs:
        d = np.asarray(d, dtype=float)
        t = np.cross([0.0, 0.0, 1.0], d)
        hip_anchor = 0.2 * d
        upper_mass, lower_mass = 0.4, 0.3
        links.append({
            "name": f"{leg}_upper", "mass": upper_mass,
            "inertia": _capsule_inertia(upper_mass, 0.04, upper_len / 2),
            "collision": False,
        })
        links.append({
            "name": f"{leg}_lower", "mass": lower_mass,
            "inertia": _capsule_inertia(lower_mass, 0.03, lower_len / 2),
            "shape": {"kind": "sphere", "params": [foot_radius],
                      "offset": [0, 0, -lower_len / 2]},
        })
        parent = "torso"
        if three:
            links.insert(-2, {
                "name": f"{leg}_hipassembly", "mass": 0.2,
                "inertia": _sphere_inertia(0.2, 0.05), "collision": False,
            })
            joints.append({
                "name": f"{leg}_abduct", "kind": "revolute",
                "parent": "torso", "child": f"{leg}_hipassembly",
                "axis": list(d), "limits": [-0.6, 0.6],
                "origin": {"pos": list(hip_anchor)},
                "stiffness": stiffness, "damping": damping,
            })
            parent = f"{leg}_hipassembly"
            hip_origin = {"pos": [0, 0, 0]}
        else:
            hip_origin = {"pos": list(hip_anchor)}
        # Upper leg extends outward along d at the hip height.
        joints.append({
            "name": f"{leg}_hip", "kind": "revolute",
            "parent": parent, "child": f"{leg}_upper",
            "axis": [0, 0, 1] if not three else list(t),
            "limits": [-1.0, 1.0],
            "origin": hip_origin,
            "child_origin": {"pos": list(-d * upper_len / 2)},
            "stiffness": stiffness, "damping": damping,
        })
        # Knee bends about the tangent; lower leg points down-out.
        joints.append({
            "name": f"{leg}_knee", "kind": "revolute",
            "parent": f"{leg}_upper", "child": f"{leg}_lower",
            "axis": list(t), "limits": [-1.8, 1.8],
            "origin": {"pos": list(d * upper_len / 2)},
            "child_origin": {"pos": [0, 0, lower_len / 2]},
            "stiffness": stiffness, "damping": damping,
        })
    return {"name": name, "links": links, "joints": joints,
            "sensors": [f"{leg}_lower" for leg, _ in legs]}


_LEG_DIRS = [
    ("fr", (0.70710678118654752, -0.70710678118654752, 0.0)),
    ("fl", (0.70710678118654752, 0.70710678118654752, 0.0)),
    ("br", (-0.70710678118654752, -0.70710678118654752, 0.0)),
    ("bl", (-0.70710678118654752, 0.70710678118654752, 0.0)),
]


def quadruped() -> ArticulationModel:
    """Sprawling 8-DOF walker: one z-axis hip and one tangent-axis knee per
    leg, foot spheres on the lower legs. 9 links, 8 DOFs."""
    doc = _quadruped_doc(_LEG_DIRS, torso_radius=0.25, torso_mass=10.0,
                         upper_len=0.3, lower_len=0.3,
                         foot_radius=0.05, name="quadruped",
                         gains=(85.0, 4.0))
    return load_model(doc)


def quadruped12() -> ArticulationModel:
    """12-DOF walker with an extra abduction hinge per leg. 13 links."""
    doc = _quadruped_doc(_LEG_DIRS, torso_radius=0.25, torso_mass=12.0,
                         upper_len=0.28, lower_len=0.28,
                         foot_radius=0.04, name="quadruped12",
                         gains=(80.0, 2.0))
    return load_model(doc)


QUADRUPED_REST_HEIGHT = 0.35
QUADRUPED12_REST_HEIGHT = 0.32


REGISTRY = {
    "free_sphere": free_sphere,
    "free_box": free_box,
    "flyer": flyer,
    "pendulum": pendulum,
    "cartpole": cartpole,
    "chain3": chain3,
    "quadruped": quadruped,
    "quadruped12": quadruped12,
}


def get_model(name: str, **kwargs) -> ArticulationModel:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; have {sorted(REGISTRY)}") from None
    return builder(**kwargs)
