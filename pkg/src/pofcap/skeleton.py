"""Kinematic skeletons, model parameters, camera projection and forward kinematics.

Conventions: lengths in cm, angles in radians, image coordinates in px with x
to the right and y down. The camera frame has z pointing into the scene, so a
standing subject's "up" is -y.

Every non-root joint n carries the rotation of the bone (parent(n), n):
``G_n = G_parent(n) @ R(theta_n)`` and ``J_n = J_parent(n) + G_n @ (phi_n * o_n)``,
with the root at ``t`` and rotated by ``R(theta_root)``.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import kernels

SCHEMA = "pofcap.skeleton/1"
PARAMS_SCHEMA = "pofcap.params/1"
DEGENERATE_EPS = 1e-8

BODY_JOINTS = ("Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow",
               "LWrist", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle",
               "REye", "LEye", "REar", "LEar")
TORSO_JOINTS = ("Neck", "RShoulder", "LShoulder", "RHip", "LHip")
LEG_JOINTS = ("RKnee", "RAnkle", "LKnee", "LAnkle")
TOE_NAMES = ("LBigToe", "LSmallToe", "LHeel", "RBigToe", "RSmallToe", "RHeel")


class SkeletonError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


def _default_markers(offsets, parts, per_part):
    """Rigid surface markers: a helix of points around each bone."""
    markers = []
    for m, n in parts:
        o = offsets[n]
        length = np.linalg.norm(o)
        d = o / length
        helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        e1 = np.cross(d, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        radius = float(np.clip(0.15 * length, 0.5, 6.0))
        pts = []
        for i in range(per_part):
            frac = 0.15 + 0.7 * i / max(per_part - 1, 1)
            ang = i * 3.0 * np.pi / 4.0
            pts.append(frac * o + radius * (np.cos(ang) * e1 + np.sin(ang) * e2))
        markers.append(np.array(pts).reshape(-1, 3))
    return markers


@dataclass(frozen=True, eq=False)
class SkeletonDef:
    """Joint hierarchy with template offsets (parent frame, cm) and part markers.

    Parts are ordered by child joint index: part p connects
    ``(parents[c], c)`` for the p-th non-root joint c.
    """

    names: tuple
    parents: np.ndarray
    offsets: np.ndarray
    markers: tuple = None
    regions: tuple = None
    name: str = "custom"
    order: np.ndarray = field(init=False, repr=False)
    parts: tuple = field(init=False, repr=False)
    part_child: np.ndarray = field(init=False, repr=False)
    part_of_joint: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int32)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        n = len(self.names)
        if parents.shape != (n,) or offsets.shape != (n, 3):
            raise SkeletonError("names, parents and offsets disagree in length")
        roots = np.flatnonzero(parents < 0)
        if len(roots) != 1:
            raise SkeletonError(f"skeleton needs exactly one root, found {len(roots)}")
        if np.any(parents >= n):
            raise SkeletonError("parent index out of range")
        order, seen = [], np.zeros(n, dtype=bool)
        frontier = [int(roots[0])]
        while frontier:
            k = frontier.pop(0)
            order.append(k)
            seen[k] = True
            frontier.extend(int(c) for c in np.flatnonzero(parents == k))
        if not seen.all():
            raise SkeletonError("parent links contain a cycle or detached joints")
        parts = tuple((int(parents[c]), c) for c in range(n) if parents[c] >= 0)
        lengths = np.linalg.norm(offsets[[c for _, c in parts]], axis=1)
        if np.any(lengths <= 0):
            bad = self.names[parts[int(np.argmin(lengths))][1]]
            raise SkeletonError(f"template bone ending at {bad!r} has non-positive length")
        part_of_joint = np.full(n, -1, dtype=np.int32)
        for p, (_, c) in enumerate(parts):
            part_of_joint[c] = p
        markers = self.markers
        if markers is None:
            markers = _default_markers(offsets, parts, 8)
        markers = tuple(np.asarray(mk, dtype=float).reshape(-1, 3) for mk in markers)
        if len(markers) != len(parts):
            raise SkeletonError("need one marker list per part")
        regions = tuple(self.regions) if self.regions is not None else ("body",) * n
        for arr in (parents, offsets):
            arr.setflags(write=False)
        s = object.__setattr__
        s(self, "names", tuple(self.names))
        s(self, "parents", parents)
        s(self, "offsets", offsets)
        s(self, "markers", markers)
        s(self, "regions", regions)
        s(self, "order", np.array(order, dtype=np.int32))
        s(self, "parts", parts)
        s(self, "part_child", np.array([c for _, c in parts], dtype=np.int32))
        s(self, "part_of_joint", part_of_joint)

    @property
    def n_joints(self):
        return len(self.names)

    @property
    def n_parts(self):
        return len(self.parts)

    @property
    def root(self):
        return int(self.order[0])

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise SkeletonError(f"unknown joint {name!r}") from None

    def part_name(self, p):
        m, n = self.parts[p]
        return f"{self.names[m]}->{self.names[n]}"

    def bone_lengths(self):
        return np.linalg.norm(self.offsets[self.part_child], axis=1)

    def rest_pose(self):
        return forward_kinematics(ModelParams.rest(self), self)

    def marker_layout(self):
        """Flattened markers: (part id per marker, anchor joint, frame joint, local offsets)."""
        part_ids = np.concatenate([np.full(len(mk), p, dtype=np.int32)
                                   for p, mk in enumerate(self.markers)])
        local = np.concatenate(self.markers) if part_ids.size else np.zeros((0, 3))
        anchor = np.array([self.parts[p][0] for p in part_ids], dtype=np.int32)
        frame = np.array([self.parts[p][1] for p in part_ids], dtype=np.int32)
        return part_ids, anchor, frame, local

    @property
    def n_markers(self):
        return sum(len(mk) for mk in self.markers)

    def to_dict(self):
        joints = []
        for k, nm in enumerate(self.names):
            p = self.parents[k]
            joints.append({"name": nm, "parent": None if p < 0 else self.names[p],
                           "offset": self.offsets[k].tolist(), "region": self.regions[k]})
        return {"schema": SCHEMA, "name": self.name,
                "units": {"length": "cm", "angle": "rad"}, "joints": joints,
                "markers": [mk.tolist() for mk in self.markers]}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA:
            raise SkeletonError(f"unsupported skeleton schema {doc.get('schema')!r}")
        joints = doc["joints"]
        names = [j["name"] for j in joints]
        parents = [-1 if j["parent"] is None else names.index(j["parent"]) for j in joints]
        offsets = [j["offset"] for j in joints]
        regions = [j.get("region", "body") for j in joints]
        skel = cls(names, parents, offsets, None, regions, doc.get("name", "custom"))
        if "markers" in doc:
            markers = doc["markers"]
        else:
            markers = _default_markers(skel.offsets, skel.parts, int(doc.get("markers_per_part", 8)))
        return cls(names, parents, offsets, markers, regions, doc.get("name", "custom"))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _load_preset(fname):
    with resources.files("pofcap").joinpath("data", fname).open() as f:
        return json.load(f)


def body_skeleton():
    """18-joint / 17-part body skeleton in OpenPose COCO joint order."""
    return SkeletonDef.from_dict(_load_preset("body.json"))


def hand_skeleton(side="left"):
    """21-joint / 20-part hand skeleton in OpenPose hand order; right hands are mirrored in x."""
    doc = _load_preset("hand.json")
    if side == "right":
        for j in doc["joints"]:
            j["offset"] = [-j["offset"][0], j["offset"][1], j["offset"][2]]
    elif side != "left":
        raise SkeletonError(f"unknown hand side {side!r}")
    doc["name"] = f"hand_{side}"
    for j in doc["joints"]:
        j["region"] = "lhand" if side == "left" else "rhand"
    return SkeletonDef.from_dict(doc)


def total_skeleton():
    """Body with both hands attached at the body wrists (58 joints, 57 parts)."""
    body = _load_preset("body.json")
    joints = [dict(j, region="body") for j in body["joints"]]
    for side, prefix, wrist in (("left", "L_", "LWrist"), ("right", "R_", "RWrist")):
        hand = hand_skeleton(side)
        for k in range(1, hand.n_joints):
            p = hand.parents[k]
            parent = wrist if p == hand.root else prefix + hand.names[p]
            joints.append({"name": prefix + hand.names[k], "parent": parent,
                           "offset": hand.offsets[k].tolist(), "region": hand.regions[k]})
    doc = {"schema": SCHEMA, "name": "total", "markers_per_part": 8, "joints": joints}
    return SkeletonDef.from_dict(doc)


@dataclass(frozen=True, eq=False)
class Landmarks:
    """Points rigidly attached to the skeleton: ``J[anchor] + G[frame] @ local``."""

    names: tuple
    anchor: np.ndarray
    frame: np.ndarray
    local: np.ndarray

    def __len__(self):
        return len(self.names)


def toe_landmarks(skel):
    """Big toe, small toe and heel of each foot, carried by the shin frames."""
    feet = []
    for side, sign in (("L", 1.0), ("R", -1.0)):
        ankle = skel.index(f"{side}Ankle")
        for off in ([-2.0, 7.0, -15.0], [3.0, 7.0, -13.0], [0.0, 7.0, 4.0]):
            feet.append((ankle, [sign * off[0], off[1], off[2]]))
    anchor = np.array([a for a, _ in feet], dtype=np.int32)
    return Landmarks(TOE_NAMES, anchor, anchor.copy(), np.array([o for _, o in feet], dtype=float))


def face_landmarks(skel):
    """41 landmarks on brows, eyes, nose and mouth, carried by the head (nose) frame."""
    pts = []
    for sign in (-1.0, 1.0):
        for x in np.linspace(1.5, 6.0, 5):
            pts.append([sign * x, -6.0 - 0.8 * np.sin(np.pi * (x - 1.5) / 4.5), 1.5])
    for sign in (-1.0, 1.0):
        for a in np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False):
            pts.append([sign * 3.3 + 1.4 * np.cos(a), -4.0 + 0.5 * np.sin(a), 2.0])
    for i in range(4):
        pts.append([0.0, -4.5 + 1.1 * i, 0.5 - 0.4 * i])
    for x in np.linspace(-1.6, 1.6, 5):
        pts.append([x, 0.3, 1.2 - 0.2 * abs(x)])
    for a in np.linspace(0.0, 2.0 * np.pi, 10, endpoint=False):
        pts.append([2.5 * np.cos(a), 4.0 + 1.0 * np.sin(a), 1.0 + 0.3 * abs(np.cos(a))])
    local = np.array(pts)
    nose = skel.index("Nose")
    anchor = np.full(len(local), nose, dtype=np.int32)
    return Landmarks(tuple(f"face{i}" for i in range(len(local))), anchor, anchor.copy(), local)


@dataclass(frozen=True, eq=False)
class NetworkMap:
    """Maps a detector's keypoint and part indices onto model joints and parts (-1 = unused)."""

    joint_map: np.ndarray
    part_map: np.ndarray


@dataclass(frozen=True, eq=False)
class BodyModel:
    """A skeleton plus the detector maps and optional toe/face landmark sets it is fitted with."""

    skeleton: SkeletonDef
    networks: dict
    toes: Landmarks = None
    face: Landmarks = None
    face_basis: np.ndarray = None

    def __post_init__(self):
        if self.face is not None:
            basis = np.zeros((3 * len(self.face), 0)) if self.face_basis is None else \
                np.asarray(self.face_basis, dtype=float)
            if basis.shape[0] != 3 * len(self.face):
                raise SkeletonError("face basis rows must equal 3 x number of face landmarks")
            object.__setattr__(self, "face_basis", basis)

    @property
    def k_sigma(self):
        return 0 if self.face_basis is None else self.face_basis.shape[1]

    @classmethod
    def body(cls, toes=True, face=False, face_basis=None):
        skel = body_skeleton()
        nets = {"body": NetworkMap(np.arange(18, dtype=np.int32), np.arange(17, dtype=np.int32))}
        return cls(skel, nets, toe_landmarks(skel) if toes else None,
                   face_landmarks(skel) if face else None, face_basis if face else None)

    @classmethod
    def hand(cls, side="left"):
        skel = hand_skeleton(side)
        key = "lhand" if side == "left" else "rhand"
        return cls(skel, {key: NetworkMap(np.arange(21, dtype=np.int32), np.arange(20, dtype=np.int32))})

    @classmethod
    def total(cls, toes=True, face=True, face_basis=None):
        skel = total_skeleton()
        nets = {"body": NetworkMap(np.arange(18, dtype=np.int32), np.arange(17, dtype=np.int32))}
        for key, prefix, wrist in (("lhand", "L_", "LWrist"), ("rhand", "R_", "RWrist")):
            hand = hand_skeleton()
            jm = [skel.index(wrist)] + [skel.index(prefix + hand.names[k]) for k in range(1, 21)]
            pm = [int(skel.part_of_joint[jm[c]]) for c in hand.part_child]
            nets[key] = NetworkMap(np.array(jm, dtype=np.int32), np.array(pm, dtype=np.int32))
        return cls(skel, nets, toe_landmarks(skel) if toes else None,
                   face_landmarks(skel) if face else None, face_basis if face else None)

    def face_local(self, sigma):
        """Face landmark offsets in the head frame after applying expression ``sigma``."""
        disp = (self.face_basis @ np.asarray(sigma, dtype=float)).reshape(-1, 3)
        return self.face.local + disp


def _frozen(a, shape=None):
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Pose theta (J,3), bone scales phi (P,), translation t (3,), expression sigma (K,)."""

    theta: np.ndarray
    phi: np.ndarray
    t: np.ndarray
    sigma: np.ndarray = None

    def __post_init__(self):
        s = object.__setattr__
        s(self, "theta", _frozen(self.theta, (-1, 3)))
        s(self, "phi", _frozen(self.phi, (-1,)))
        s(self, "t", _frozen(self.t, (3,)))
        s(self, "sigma", _frozen(np.zeros(0) if self.sigma is None else self.sigma, (-1,)))
        if np.any(self.phi <= 0):
            raise SkeletonError("bone scales must be positive")

    @classmethod
    def rest(cls, skel, k_sigma=0, t=(0.0, 0.0, 0.0)):
        return cls(np.zeros((skel.n_joints, 3)), np.ones(skel.n_parts), t, np.zeros(k_sigma))

    @property
    def size(self):
        return self.theta.size + self.phi.size + 3 + self.sigma.size

    def to_vector(self):
        return np.concatenate([self.theta.ravel(), self.phi, self.t, self.sigma])

    @classmethod
    def from_vector(cls, vec, n_joints, n_parts, k_sigma=0):
        vec = np.asarray(vec, dtype=float)
        if vec.size != 3 * n_joints + n_parts + 3 + k_sigma:
            raise SkeletonError("parameter vector has the wrong length")
        a = 3 * n_joints
        b = a + n_parts
        return cls(vec[:a].reshape(-1, 3), vec[a:b], vec[b:b + 3], vec[b + 3:])

    def like(self, vec):
        return ModelParams.from_vector(vec, len(self.theta), len(self.phi), len(self.sigma))

    def replace(self, **kw):
        d = {"theta": self.theta, "phi": self.phi, "t": self.t, "sigma": self.sigma}
        d.update(kw)
        return ModelParams(**d)

    def check(self, skel, k_sigma=None):
        if self.theta.shape != (skel.n_joints, 3) or self.phi.shape != (skel.n_parts,):
            raise SkeletonError(
                f"params sized for {len(self.theta)} joints/{len(self.phi)} parts, "
                f"skeleton has {skel.n_joints}/{skel.n_parts}")
        if k_sigma is not None and len(self.sigma) != k_sigma:
            raise SkeletonError(f"sigma has length {len(self.sigma)}, face basis has {k_sigma}")

    def to_dict(self):
        return {"schema": PARAMS_SCHEMA, "theta": self.theta.tolist(), "phi": self.phi.tolist(),
                "t": self.t.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema", PARAMS_SCHEMA) != PARAMS_SCHEMA:
            raise SkeletonError(f"unsupported params schema {doc.get('schema')!r}")
        return cls(doc["theta"], doc["phi"], doc["t"], doc.get("sigma", []))


@dataclass(frozen=True)
class Camera:
    """Weak-perspective (scale px/cm) or perspective (focal px) camera with principal point."""

    mode: str
    scale: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.mode not in ("weak", "perspective"):
            raise ValueError(f"unknown camera mode {self.mode!r}")
        if not self.scale > 0:
            raise ValueError("camera scale/focal must be positive")

    @classmethod
    def weak(cls, s, cx, cy):
        return cls("weak", float(s), float(cx), float(cy))

    @classmethod
    def perspective(cls, f, cx, cy):
        return cls("perspective", float(f), float(cx), float(cy))

    def project(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        c = np.array([self.cx, self.cy])
        if self.mode == "weak":
            return self.scale * p[:, :2] + c
        z = p[:, 2]
        if np.any(z <= 0):
            raise ProjectionError("point behind camera (non-positive depth)")
        return self.scale * p[:, :2] / z[:, None] + c

    def jacobian(self, points):
        """d(pixel)/d(point), shape (N, 2, 3)."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        J = np.zeros((len(p), 2, 3))
        if self.mode == "weak":
            J[:, 0, 0] = J[:, 1, 1] = self.scale
            return J
        z = p[:, 2]
        if np.any(z <= 0):
            raise ProjectionError("point behind camera (non-positive depth)")
        J[:, 0, 0] = J[:, 1, 1] = self.scale / z
        J[:, 0, 2] = -self.scale * p[:, 0] / z**2
        J[:, 1, 2] = -self.scale * p[:, 1] / z**2
        return J

    def to_dict(self):
        return {"mode": self.mode, "scale": self.scale, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], float(d["scale"]), float(d["cx"]), float(d["cy"]))


def project(camera, points):
    return camera.project(points)


class PoseState:
    """Forward kinematics evaluated once, queried for points and their Jacobians.

    Jacobian columns follow ``ModelParams.to_vector`` minus sigma:
    theta (3J), phi (P), t (3).
    """

    def __init__(self, params, skel):
        params.check(skel)
        self.skel = skel
        self.params = params
        scale = np.ones(skel.n_joints)
        scale[skel.part_child] = params.phi
        self.pos, self.rot, self.omega = kernels.forward_kinematics(
            skel.parents, skel.order, skel.offsets, params.theta, scale, params.t)

    @property
    def n_vars(self):
        return 3 * self.skel.n_joints + self.skel.n_parts + 3

    def attached(self, anchor, frame, local, jacobian=True):
        anchor = np.asarray(anchor, dtype=np.int32)
        frame = np.asarray(frame, dtype=np.int32)
        local = np.asarray(local, dtype=float).reshape(-1, 3)
        if not jacobian:
            return self.pos[anchor] + np.einsum("nij,nj->ni", self.rot[frame], local), None
        s = self.skel
        pts, dth, dsc = kernels.attached_jacobian(s.parents, s.offsets, self.pos, self.rot,
                                                  self.omega, anchor, frame, local)
        dt = np.broadcast_to(np.eye(3), (len(pts), 3, 3))
        return pts, np.concatenate([dth, dsc[:, :, s.part_child], dt], axis=2)

    def joints(self, jacobian=True):
        idx = np.arange(self.skel.n_joints, dtype=np.int32)
        if not jacobian:
            return self.pos.copy(), None
        return self.attached(idx, idx, np.zeros((len(idx), 3)))

    def markers(self, jacobian=True):
        _, anchor, frame, local = self.skel.marker_layout()
        return self.attached(anchor, frame, local, jacobian)


def forward_kinematics(params, skel):
    """Joint positions (J, 3) in the camera frame."""
    return PoseState(params, skel).pos.copy()


def part_orientations(joints, skel):
    """Unit direction of every part, from parent joint to child joint."""
    joints = np.asarray(joints, dtype=float)
    m = np.array([a for a, _ in skel.parts])
    d = joints[skel.part_child] - joints[m]
    norms = np.linalg.norm(d, axis=1)
    bad = np.flatnonzero(norms < DEGENERATE_EPS)
    if bad.size:
        raise SkeletonError(f"degenerate part {skel.part_name(int(bad[0]))}: coincident endpoints")
    return d / norms[:, None]


def marker_positions(params, skel):
    """(part id per marker, marker positions (M, 3))."""
    part_ids = skel.marker_layout()[0]
    pts, _ = PoseState(params, skel).markers(jacobian=False)
    return part_ids, pts
