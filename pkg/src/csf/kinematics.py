"""Serial-chain kinematics and the virtually conditioned inertia matrix.

A chain is a list of joints, each a fixed offset from the previous joint
frame plus a motion axis.  Forward kinematics, the base-frame geometric
Jacobian and a unit-mass joint inertia H(q) are everything the Cartesian
force controller needs; no real dynamics are identified.

The hot path (one controller cycle needs FK, J and H together) works on
plain arrays cached per chain; ``Transform`` objects only appear at the
public boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .spatial import Transform

__all__ = [
    "ChainConfigError",
    "NumericalError",
    "Joint",
    "LinkParams",
    "ChainModel",
    "JointState",
    "forward_kinematics",
    "joint_frames",
    "geometric_jacobian",
    "unit_mass_matrix",
    "twin_dynamics",
    "load_chain",
    "bundled_chain",
    "BUNDLED_CHAINS",
]

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class ChainConfigError(ValueError):
    """Malformed chain description."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed (e.g. H not positive definite)."""


def _rpy_matrix(rpy) -> np.ndarray:
    r, p, y = rpy
    # fixed-axis x-y-z (roll, pitch, yaw)
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@dataclass(frozen=True)
class Joint:
    origin: Transform          # fixed offset from the previous joint frame
    axis: np.ndarray           # unit vector in the joint's own frame
    kind: str = REVOLUTE

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-9:
            if n == 0.0:
                raise ChainConfigError("joint axis must be nonzero")
            axis = axis / n
        object.__setattr__(self, "axis", axis)
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ChainConfigError(f"unknown joint kind {self.kind!r}")


@dataclass(frozen=True)
class LinkParams:
    """Virtual-twin body attached after a joint; com in that joint's frame."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray        # 3x3, about the com, in the link frame

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        if np.max(np.abs(inertia - inertia.T)) > 1e-12:
            raise ChainConfigError("link inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0.0):
            raise ChainConfigError("link inertia must be positive definite")
        object.__setattr__(self, "inertia", inertia)


class _ChainArrays:
    """Static per-chain arrays for the hot path."""

    def __init__(self, joints, ee_offset: Transform, links):
        n = len(joints)
        self.n = n
        self.origin_rot = np.stack([j.origin.rot for j in joints])
        self.origin_trans = np.stack([j.origin.trans for j in joints])
        self.axis = np.stack([j.axis for j in joints])
        self.axis_skew = np.stack([_skew(j.axis) for j in joints])
        self.axis_skew2 = np.stack([s @ s for s in self.axis_skew])
        self.revolute = np.array([j.kind == REVOLUTE for j in joints])
        self.ee_rot = ee_offset.rot
        self.ee_trans = ee_offset.trans
        self.mass = np.array([l.mass for l in links])
        self.com = np.stack([l.com for l in links])
        self.inertia = np.stack([l.inertia for l in links])


@dataclass(frozen=True)
class ChainModel:
    name: str
    joints: tuple[Joint, ...]
    ee_offset: Transform
    links: tuple[LinkParams, ...]

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ChainConfigError("chain needs at least one joint")
        if len(self.links) != len(self.joints):
            raise ChainConfigError("one link body per joint required")
        object.__setattr__(self, "_arrays",
                           _ChainArrays(self.joints, self.ee_offset, self.links))

    @property
    def dof(self) -> int:
        return len(self.joints)


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qd = np.asarray(self.qd, dtype=float).reshape(-1)
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd dimensions differ")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("non-finite joint state")


def _check_dim(chain: ChainModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.dof:
        raise ValueError(f"expected {chain.dof} joint values, got {q.shape[0]}")
    return q


def _frames_raw(chain: ChainModel, q: np.ndarray):
    """Base-frame (rotation, origin) of every joint frame plus the end effector."""
    arr = chain._arrays
    n = arr.n
    rots = np.empty((n + 1, 3, 3))
    trans = np.empty((n + 1, 3))
    r = np.eye(3)
    p = np.zeros(3)
    eye = np.eye(3)
    for i in range(n):
        p = r @ arr.origin_trans[i] + p
        r = r @ arr.origin_rot[i]
        if arr.revolute[i]:
            s, c = np.sin(q[i]), np.cos(q[i])
            # Rodrigues about the (unit) joint axis
            r = r @ (eye + s * arr.axis_skew[i] + (1.0 - c) * arr.axis_skew2[i])
        else:
            p = p + r @ (arr.axis[i] * q[i])
        rots[i] = r
        trans[i] = p
    rots[n] = r @ arr.ee_rot
    trans[n] = r @ arr.ee_trans + p
    return rots, trans


def joint_frames(chain: ChainModel, q) -> list[Transform]:
    """Base-frame pose of every joint frame (post motion), then the end effector."""
    q = _check_dim(chain, q)
    rots, trans = _frames_raw(chain, q)
    frames = [Transform(rots[i], trans[i], "b", "link") for i in range(chain.dof)]
    frames.append(Transform(rots[-1], trans[-1], "b", "e"))
    return frames


def forward_kinematics(chain: ChainModel, q) -> Transform:
    """g(q): base-frame end-effector pose ``b_T_e``."""
    q = _check_dim(chain, q)
    rots, trans = _frames_raw(chain, q)
    return Transform(rots[-1], trans[-1], "b", "e")


def _jacobian_raw(chain: ChainModel, rots, trans) -> np.ndarray:
    arr = chain._arrays
    n = arr.n
    z = np.einsum("nij,nj->ni", rots[:n], arr.axis)
    jac = np.zeros((6, n))
    p_e = trans[n]
    rev = arr.revolute
    jac[:3, rev] = np.cross(z[rev], p_e - trans[:n][rev]).T
    jac[3:, rev] = z[rev].T
    jac[:3, ~rev] = z[~rev].T
    return jac


def geometric_jacobian(chain: ChainModel, q) -> np.ndarray:
    """Base-frame geometric Jacobian, rows [linear; angular], shape 6 x n."""
    q = _check_dim(chain, q)
    rots, trans = _frames_raw(chain, q)
    return _jacobian_raw(chain, rots, trans)


def _mass_matrix_raw(chain: ChainModel, rots, trans) -> np.ndarray:
    """Composite-rigid-body H(q), spatial algebra at the base origin."""
    arr = chain._arrays
    n = arr.n

    # joint motion subspaces at the base origin: [v0; w]
    s = np.zeros((n, 6))
    z = np.einsum("nij,nj->ni", rots[:n], arr.axis)
    rev = arr.revolute
    s[rev, :3] = np.cross(trans[:n][rev], z[rev])
    s[rev, 3:] = z[rev]
    s[~rev, :3] = z[~rev]

    # per-link spatial inertia at the origin, then suffix sums
    com_w = np.einsum("nij,nj->ni", rots[:n], arr.com) + trans[:n]
    inertia_w = np.einsum("nij,njk,nlk->nil", rots[:n], arr.inertia, rots[:n])
    chat = np.zeros((n, 3, 3))
    chat[:, 0, 1] = -com_w[:, 2]
    chat[:, 0, 2] = com_w[:, 1]
    chat[:, 1, 0] = com_w[:, 2]
    chat[:, 1, 2] = -com_w[:, 0]
    chat[:, 2, 0] = -com_w[:, 1]
    chat[:, 2, 1] = com_w[:, 0]
    m = arr.mass[:, None, None]
    spatial = np.zeros((n, 6, 6))
    spatial[:, :3, :3] = m * np.eye(3)
    spatial[:, :3, 3:] = -m * chat
    spatial[:, 3:, :3] = m * chat
    spatial[:, 3:, 3:] = inertia_w + m * (chat @ np.transpose(chat, (0, 2, 1)))
    composite = np.cumsum(spatial[::-1], axis=0)[::-1]

    h = np.zeros((n, n))
    for i in range(n):
        f = composite[i] @ s[i]
        h[i, : i + 1] = s[: i + 1] @ f
        h[: i + 1, i] = h[i, : i + 1]
    return 0.5 * (h + h.T)


def unit_mass_matrix(chain: ChainModel, q) -> np.ndarray:
    """H(q) of the virtual twin by the composite-rigid-body algorithm.

    Symmetric positive definite by construction; a failed Cholesky reports
    bad chain parameters rather than returning garbage.
    """
    q = _check_dim(chain, q)
    rots, trans = _frames_raw(chain, q)
    h = _mass_matrix_raw(chain, rots, trans)
    try:
        np.linalg.cholesky(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("joint inertia matrix is not positive definite; "
                             "check chain link parameters") from exc
    return h


def twin_dynamics(chain: ChainModel, q):
    """One-pass (b_T_e, J, H) for the controller hot path."""
    q = _check_dim(chain, q)
    rots, trans = _frames_raw(chain, q)
    ee = Transform(rots[-1], trans[-1], "b", "e")
    return ee, _jacobian_raw(chain, rots, trans), _mass_matrix_raw(chain, rots, trans)


# ---------------------------------------------------------------------------
# chain descriptions
# ---------------------------------------------------------------------------

def _default_links(joints: list[Joint], ee_offset: Transform, mass: float,
                   inertia_scale: float, payload_mass: float,
                   payload_inertia: float) -> list[LinkParams]:
    """Unit-mass bodies, com at the link midpoint, isotropic inertia.

    ``payload_mass``/``payload_inertia`` stand in for the grasped object:
    merged into the last link at the end-effector origin.  They condition
    the twin's Cartesian admittance toward a scaled identity (both the
    force-to-velocity and torque-to-rate maps become near isotropic when
    the payload terms dominate), which is what makes one set of regulator
    gains behave the same across robots.
    """
    links = []
    for i in range(len(joints)):
        nxt = joints[i + 1].origin.trans if i + 1 < len(joints) else ee_offset.trans
        links.append(LinkParams(mass=mass, com=0.5 * nxt, inertia=inertia_scale * np.eye(3)))
    if payload_mass > 0.0 or payload_inertia > 0.0:
        last = links[-1]
        total = last.mass + payload_mass
        com = (last.mass * last.com + payload_mass * ee_offset.trans) / total
        links[-1] = LinkParams(total, com, last.inertia + payload_inertia * np.eye(3))
    return links


def chain_from_dict(spec: dict, name: str = "chain") -> ChainModel:
    try:
        joint_specs = spec["joints"]
    except KeyError as exc:
        raise ChainConfigError("chain config missing 'joints'") from exc
    if not joint_specs:
        raise ChainConfigError("chain config has no joints")

    joints = []
    for i, js in enumerate(joint_specs):
        try:
            axis = js["axis"]
        except KeyError as exc:
            raise ChainConfigError(f"joint {i}: missing 'axis'") from exc
        xyz = js.get("origin_xyz", [0.0, 0.0, 0.0])
        rpy = js.get("origin_rpy", [0.0, 0.0, 0.0])
        kind = js.get("type", REVOLUTE)
        joints.append(Joint(Transform(_rpy_matrix(rpy), xyz), axis, kind))

    ee = spec.get("ee_offset", {})
    ee_offset = Transform(_rpy_matrix(ee.get("origin_rpy", [0, 0, 0])),
                          ee.get("origin_xyz", [0, 0, 0]))

    mass = float(spec.get("link_mass", 1.0))
    inertia_scale = float(spec.get("link_inertia_scale", 1e-2))
    payload = float(spec.get("payload_mass", 0.0))
    payload_inertia = float(spec.get("payload_inertia", 0.0))
    links = _default_links(joints, ee_offset, mass, inertia_scale, payload,
                           payload_inertia)
    return ChainModel(spec.get("name", name), tuple(joints), ee_offset, tuple(links))


def load_chain(path) -> ChainModel:
    with open(path) as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, dict):
        raise ChainConfigError(f"{path}: chain config must be a mapping")
    return chain_from_dict(spec, name=str(path))


BUNDLED_CHAINS = ("planar2", "elbow_a", "elbow_b")


def bundled_chain(name: str) -> ChainModel:
    from importlib.resources import files

    if name not in BUNDLED_CHAINS:
        raise ChainConfigError(f"unknown bundled chain {name!r}; have {BUNDLED_CHAINS}")
    text = files("csf").joinpath(f"data/chains/{name}.yaml").read_text()
    return chain_from_dict(yaml.safe_load(text), name=name)
