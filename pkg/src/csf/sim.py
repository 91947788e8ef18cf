"""Quasi-static zero-gravity contact simulator for one floating assembly object.

The active object is a compound of oriented boxes steered by a wrench
through velocity-proportional damping (no inertia: force maps directly to
velocity).  A fixed receptacle of boxes pushes back through a penalty
contact model with capped Coulomb friction.  Everything is deterministic:
same scene, seed and wrench stream give a bit-identical trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

from .spatial import (
    Transform,
    Twist,
    Wrench,
    quat_from_axis_angle,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_to_mat,
    rotvec_from_mat,
)

__all__ = [
    "SceneError",
    "StartSamplingError",
    "ContactPoint",
    "BodyState",
    "Scene",
    "collide",
    "contact_wrench",
    "sim_step",
    "coupled_sensor_wrench",
    "random_start",
    "load_scene",
    "scene_from_dict",
    "bundled_scene",
    "BUNDLED_SCENES",
]


class SceneError(ValueError):
    """Malformed or inconsistent scene description."""


class StartSamplingError(RuntimeError):
    """random_start could not find a valid pose; scene misconfigured."""


@dataclass(frozen=True)
class ContactPoint:
    point: np.ndarray    # world [m]
    normal: np.ndarray   # unit, push-out direction for the active object
    depth: float         # penetration >= 0 [m]


@dataclass
class BodyState:
    pose: Transform      # world <- object
    twist: Twist         # object frame
    # contact manifold at `pose`, filled by sim_step so the next step can
    # reuse it; None means "not computed yet"
    contacts: list[ContactPoint] | None = None

    @staticmethod
    def at_rest(pose: Transform) -> "BodyState":
        return BodyState(pose, Twist.zero("object"))


@dataclass(frozen=True)
class _BoxPart:
    rot: np.ndarray      # orientation (3x3)
    trans: np.ndarray    # center
    half: np.ndarray     # half extents


@dataclass(frozen=True)
class Scene:
    """Runtime scene: geometry plus contact/damping parameters (all SI)."""

    name: str
    active_parts: tuple[_BoxPart, ...]   # in the object frame
    receptacle: tuple[_BoxPart, ...]     # in the world frame
    goal: Transform                      # world <- object at success
    clearance_lin: float
    clearance_rot: float
    d_lin: float
    d_rot: float
    k_pen: float
    c_pen: float
    c_tan: float
    mu: float
    sim_dt: float
    insertion_axis: np.ndarray           # world, unit, direction of insertion
    entrance_depth: float                # goal sits this far beyond the entrance plane

    def __post_init__(self):
        if self.clearance_lin <= 0 or self.d_lin <= 0 or self.d_rot <= 0 or self.sim_dt <= 0:
            raise SceneError("clearances, damping and sim_dt must be positive")
        axis = np.asarray(self.insertion_axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0:
            raise SceneError("insertion axis must be nonzero")
        object.__setattr__(self, "insertion_axis", axis / n)
        object.__setattr__(self, "_radii", (
            [float(np.linalg.norm(p.half)) for p in self.active_parts],
            [float(np.linalg.norm(p.half)) for p in self.receptacle],
        ))

    @property
    def entrance_point(self) -> np.ndarray:
        return self.goal.trans - self.insertion_axis * self.entrance_depth

    # -- scoring helpers ---------------------------------------------------

    def distance_to_goal(self, pose: Transform) -> float:
        return float(np.linalg.norm(pose.trans - self.goal.trans))

    def rotation_error(self, pose: Transform) -> float:
        return float(np.linalg.norm(rotvec_from_mat(self.goal.rot.T @ pose.rot)))

    def insertion_coordinate(self, pose: Transform) -> float:
        """Signed progress past the socket entrance along the insertion axis."""
        return float((pose.trans - self.entrance_point) @ self.insertion_axis)

    def is_success(self, pose: Transform) -> bool:
        return (
            self.distance_to_goal(pose) < self.clearance_lin
            and self.rotation_error(pose) < self.clearance_rot
            and self.insertion_coordinate(pose) > 0.0
        )

    def transformed(self, world_T_scene: Transform) -> "Scene":
        """Rigidly re-position the whole scene (receptacle, goal, axis)."""
        r, p = world_T_scene.rot, world_T_scene.trans
        recs = tuple(
            _BoxPart(r @ b.rot, r @ b.trans + p, b.half) for b in self.receptacle
        )
        goal = Transform(r @ self.goal.rot, r @ self.goal.trans + p,
                         world_T_scene.from_frame, "object")
        return replace(self, receptacle=recs, goal=goal,
                       insertion_axis=r @ self.insertion_axis)


# ---------------------------------------------------------------------------
# box-box contact manifold (separating axis test)
# ---------------------------------------------------------------------------

_EDGE_BIAS = 1e-7   # prefer face axes on near-ties; edges are noisier


def _face_contacts(ref: _BoxPart, inc: _BoxPart, axis_idx: int, sign: float,
                   normal: np.ndarray) -> list[ContactPoint]:
    """Clip the incident face against the reference face's side planes.

    ``sign``: the reference face lies at +/- half[axis_idx] along its own
    axis.  Returned depths are penetrations below that face.
    """
    # incident face: the face of `inc` most anti-parallel to the ref face normal
    face_normal_w = sign * ref.rot[:, axis_idx]
    alignment = face_normal_w @ inc.rot
    j = int(np.argmax(np.abs(alignment)))
    sign_inc = -1.0 if alignment[j] > 0 else 1.0
    u, v = [k for k in range(3) if k != j]
    center = inc.trans + sign_inc * inc.half[j] * inc.rot[:, j]
    corners = [
        center + su * inc.half[u] * inc.rot[:, u] + sv * inc.half[v] * inc.rot[:, v]
        for su, sv in ((-1, -1), (-1, 1), (1, 1), (1, -1))
    ]

    # clip in the reference frame against the 4 side planes
    to_ref = ref.rot.T
    poly = [to_ref @ (c - ref.trans) for c in corners]
    for k in range(3):
        if k == axis_idx:
            continue
        for side in (1.0, -1.0):
            limit = ref.half[k]
            clipped = []
            m = len(poly)
            for a in range(m):
                pa, pb = poly[a], poly[(a + 1) % m]
                da = side * pa[k] - limit
                db = side * pb[k] - limit
                if da <= 0.0:
                    clipped.append(pa)
                if (da < 0.0 < db) or (db < 0.0 < da):
                    clipped.append(pa + (pb - pa) * (da / (da - db)))
            poly = clipped
            if not poly:
                return []

    contacts = []
    for p in poly:
        depth = ref.half[axis_idx] - sign * p[axis_idx]
        if depth >= 0.0:
            contacts.append(
                ContactPoint(ref.rot @ p + ref.trans, normal.copy(), float(depth))
            )
    return contacts


def _edge_contact(a: _BoxPart, b: _BoxPart, i: int, j: int, normal: np.ndarray,
                  depth: float) -> list[ContactPoint]:
    # supporting edges: on the side of each box facing the other
    pa = a.trans.copy()
    for k in range(3):
        if k != i:
            pa -= math.copysign(a.half[k], normal @ a.rot[:, k]) * a.rot[:, k]
    pb = b.trans.copy()
    for k in range(3):
        if k != j:
            pb += math.copysign(b.half[k], normal @ b.rot[:, k]) * b.rot[:, k]

    ua, ub = a.rot[:, i], b.rot[:, j]
    d = pb - pa
    uaub = ua @ ub
    denom = 1.0 - uaub * uaub
    if denom < 1e-12:
        alpha = beta = 0.0
    else:
        q1, q2 = ua @ d, ub @ d
        alpha = (q1 - uaub * q2) / denom
        beta = (uaub * q1 - q2) / denom
    point = 0.5 * ((pa + alpha * ua) + (pb + beta * ub))
    return [ContactPoint(point, normal.copy(), float(depth))]


def box_box_contacts(a: _BoxPart, b: _BoxPart) -> list[ContactPoint]:
    """Contact manifold between two oriented boxes.

    Normals point from ``b`` into ``a`` (the direction that de-penetrates
    ``a``).  Returns at most 4 points.
    """
    c = a.rot.T @ b.rot
    abs_c = np.abs(c) + 1e-12
    t_w = b.trans - a.trans
    t_a = a.rot.T @ t_w
    t_b = c.T @ t_a

    sep_a = np.abs(t_a) - (a.half + abs_c @ b.half)
    if sep_a.max() > 0.0:
        return []
    sep_b = np.abs(t_b) - (b.half + a.half @ abs_c)
    if sep_b.max() > 0.0:
        return []

    # edge cross axes, all nine at once: axes[i, j] = a_i x b_j
    axes = np.cross(a.rot.T[:, None, :], b.rot.T[None, :, :])
    norms = np.linalg.norm(axes, axis=2)
    valid = norms > 1e-9
    axes = axes / np.where(valid, norms, 1.0)[:, :, None]
    proj_a = np.abs(axes @ a.rot) @ a.half
    proj_b = np.abs(axes @ b.rot) @ b.half
    sep_e = np.abs(axes @ t_w) - (proj_a + proj_b)
    sep_e[~valid] = -np.inf
    if sep_e.max() > 0.0:
        return []

    ia = int(np.argmax(sep_a))
    ib = int(np.argmax(sep_b))
    best_sep = max(sep_a[ia], sep_b[ib])
    ie = int(np.argmax(sep_e))
    i_e, j_e = divmod(ie, 3)
    if sep_e[i_e, j_e] > best_sep + _EDGE_BIAS:
        depth = -sep_e[i_e, j_e]
        axis_w = axes[i_e, j_e]
        normal = axis_w if axis_w @ (a.trans - b.trans) > 0 else -axis_w
        return _edge_contact(a, b, i_e, j_e, normal, depth)
    if sep_a[ia] >= sep_b[ib]:
        sign = 1.0 if t_a[ia] > 0 else -1.0
        normal = -sign * a.rot[:, ia]         # push a away from b
        return _face_contacts(a, b, ia, sign, normal)
    # t_b holds b-frame coords of (p_b - p_a), so a sits at -t_b
    sign = -1.0 if t_b[ib] > 0 else 1.0
    normal = sign * b.rot[:, ib]              # outward face normal, points toward a
    return _face_contacts(b, a, ib, sign, normal)


def _active_parts_world(scene: Scene, pose: Transform) -> list[_BoxPart]:
    return [
        _BoxPart(pose.rot @ p.rot, pose.rot @ p.trans + pose.trans, p.half)
        for p in scene.active_parts
    ]


def collide(scene: Scene, pose: Transform) -> list[ContactPoint]:
    """Contact manifold between the active object at ``pose`` and the receptacle.

    Deterministic ordering: by (active part, receptacle part) pair, then
    lexicographic contact point.
    """
    out = []
    radii = scene._radii
    for ia, part in enumerate(_active_parts_world(scene, pose)):
        ra = radii[0][ia]
        for ib, rec in enumerate(scene.receptacle):
            reach = ra + radii[1][ib]
            d = part.trans - rec.trans
            if d @ d > reach * reach:
                continue
            cps = box_box_contacts(part, rec)
            if len(cps) > 4:
                cps.sort(key=lambda cp: (-cp.depth, cp.point[0], cp.point[1], cp.point[2]))
                cps = cps[:4]
            cps.sort(key=lambda cp: (cp.point[0], cp.point[1], cp.point[2]))
            out.extend(cps)
    return out


# ---------------------------------------------------------------------------
# contact forces and stepping
# ---------------------------------------------------------------------------

def contact_wrench(contacts: list[ContactPoint], state: BodyState, scene: Scene) -> Wrench:
    """Penalty + capped-viscous-friction wrench about the object center, object frame."""
    if not contacts:
        return Wrench.zero("object")
    rot, pos = state.pose.rot, state.pose.trans
    v_w = rot @ state.twist.linear
    w_w = rot @ state.twist.angular
    force = np.zeros(3)
    torque = np.zeros(3)
    # the viscous slope is split across the manifold so the total tangential
    # stiffness stays below the drag and the explicit step cannot ring
    c_tan = scene.c_tan / len(contacts)
    for cp in contacts:
        arm = cp.point - pos
        v_p = v_w + np.cross(w_w, arm)
        v_n = v_p @ cp.normal
        f_n_mag = scene.k_pen * cp.depth + scene.c_pen * max(0.0, -v_n)
        f = f_n_mag * cp.normal
        v_t = v_p - v_n * cp.normal
        v_t_norm = float(np.linalg.norm(v_t))
        if v_t_norm > 1e-12:
            f_t_mag = min(c_tan * v_t_norm, scene.mu * f_n_mag)
            f = f - f_t_mag * (v_t / v_t_norm)
        force += f
        torque += np.cross(arm, f)
    return Wrench(rot.T @ force, rot.T @ torque, "object")


def sim_step(scene: Scene, state: BodyState, f_d: Wrench, dt: float):
    """One damped quasi-static step: velocity = (applied + contact) / damping.

    Returns ``(state', contacts_after, f_c)`` where ``f_c`` is the contact
    wrench that acted during the step (object frame).
    """
    if abs(dt - scene.sim_dt) > 1e-12:
        raise ValueError(f"dt {dt} does not match scene.sim_dt {scene.sim_dt}")
    contacts = state.contacts if state.contacts is not None else collide(scene, state.pose)
    f_c = contact_wrench(contacts, state, scene)

    v = (f_d.force + f_c.force) / scene.d_lin
    w = (f_d.torque + f_c.torque) / scene.d_rot

    rot, pos = state.pose.rot, state.pose.trans
    new_pos = pos + rot @ v * dt
    q = quat_normalize(quat_mul(state.pose.quat(), quat_from_rotvec(w * dt)))
    new_pose = Transform(quat_to_mat(q), new_pos, state.pose.from_frame, "object")
    new_contacts = collide(scene, new_pose)
    new_state = BodyState(new_pose, Twist(v, w, "object"), contacts=new_contacts)
    return new_state, new_contacts, f_c


def coupled_sensor_wrench(contacts: list[ContactPoint], state: BodyState,
                          scene: Scene) -> Wrench:
    """Force-torque sensor reading in robot-coupled mode.

    The sensor measures the wrench the end effector exerts on the
    environment, so it reads the negated contact push-back, in the
    end-effector frame (which coincides with the object frame).
    """
    f_c = contact_wrench(contacts, state, scene)
    return Wrench(-f_c.force, -f_c.torque, "e")


# ---------------------------------------------------------------------------
# start sampling
# ---------------------------------------------------------------------------

def _uniform_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
    return v / n


def random_start(scene: Scene, rng: np.random.Generator, linear_range: float,
                 angular_range: float, max_tries: int = 10_000) -> Transform:
    """Goal pose perturbed uniformly, rejection-sampled to be collision-free
    and (for nonzero ranges) outside the socket entrance."""
    if linear_range < 0 or angular_range < 0:
        raise ValueError("ranges must be non-negative")
    for _ in range(max_tries):
        offset = _uniform_unit(rng) * rng.uniform(0.0, linear_range)
        angle = rng.uniform(0.0, angular_range)
        q = quat_mul(scene.goal.quat(), quat_from_axis_angle(_uniform_unit(rng), angle))
        pose = Transform(quat_to_mat(q), scene.goal.trans + offset,
                         scene.goal.from_frame, "object")
        if collide(scene, pose):
            continue
        if linear_range > 0.0 and scene.insertion_coordinate(pose) >= 0.0:
            continue   # starts must not begin inside the socket
        return pose
    raise StartSamplingError(
        f"no collision-free start within {max_tries} tries; check scene/ranges"
    )


# ---------------------------------------------------------------------------
# scene descriptions
# ---------------------------------------------------------------------------

def _pose_from_spec(spec: dict) -> Transform:
    xyz = spec.get("xyz", [0.0, 0.0, 0.0])
    if "quat" in spec:
        return Transform(quat_to_mat(quat_normalize(spec["quat"])), xyz)
    rpy = spec.get("rpy", [0.0, 0.0, 0.0])
    from .kinematics import _rpy_matrix

    return Transform(_rpy_matrix(rpy), xyz)


def _box_from_spec(spec: dict) -> _BoxPart:
    if "extents" not in spec:
        raise SceneError("box spec missing 'extents'")
    ext = np.asarray(spec["extents"], dtype=float).reshape(3)
    if np.any(ext <= 0):
        raise SceneError("box extents must be positive")
    pose = _pose_from_spec(spec.get("pose", {}))
    return _BoxPart(pose.rot, pose.trans, 0.5 * ext)


def scene_from_dict(spec: dict, name: str = "scene") -> Scene:
    try:
        active = spec["active_box"]
        receptacle = spec["receptacle"]
        goal = spec["goal_pose"]
    except KeyError as exc:
        raise SceneError(f"scene config missing {exc.args[0]!r}") from exc

    parts = [_box_from_spec({"extents": active["extents"]})]
    for plate in active.get("plates", []):
        parts.append(_box_from_spec(plate))

    c_pen = float(spec.get("c_pen", 5.0))
    return Scene(
        name=spec.get("name", name),
        active_parts=tuple(parts),
        receptacle=tuple(_box_from_spec(b) for b in receptacle),
        goal=Transform(_pose_from_spec(goal).rot, _pose_from_spec(goal).trans,
                       "world", "object"),
        clearance_lin=float(spec.get("clearance_lin", 0.002)),
        clearance_rot=float(spec.get("clearance_rot", 0.05)),
        d_lin=float(spec.get("d_lin", 50.0)),
        d_rot=float(spec.get("d_rot", 5.0)),
        k_pen=float(spec.get("k_pen", 1e4)),
        c_pen=c_pen,
        c_tan=float(spec.get("c_tan", 20.0)),
        mu=float(spec.get("mu", 0.8)),
        sim_dt=float(spec.get("sim_dt", 1e-3)),
        insertion_axis=spec.get("insertion_axis", [0.0, 0.0, -1.0]),
        entrance_depth=float(spec.get("entrance_depth", 0.05)),
    )


def load_scene(path) -> Scene:
    with open(path) as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, dict):
        raise SceneError(f"{path}: scene config must be a mapping")
    return scene_from_dict(spec, name=str(path))


BUNDLED_SCENES = ("slot_planar", "plated_cube")


def bundled_scene(name: str) -> Scene:
    from importlib.resources import files

    if name not in BUNDLED_SCENES:
        raise SceneError(f"unknown bundled scene {name!r}; have {BUNDLED_SCENES}")
    text = files("csf").joinpath(f"data/scenes/{name}.yaml").read_text()
    return scene_from_dict(yaml.safe_load(text), name=name)
