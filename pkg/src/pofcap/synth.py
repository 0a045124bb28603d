"""Synthetic ground truth and detector-like observations.

Poses are drawn from per-joint truncated Gaussians, animated by integrating
smooth bounded angular velocities, projected, and rendered into confidence
maps and part orientation fields. Noise is injected into the keypoints and
orientations that the fields are rendered from, so a decoder sees it exactly
as it would see detector error.

All randomness comes from one counter-based generator (Philox) per purpose,
keyed by the scene seed, so outputs are bit-reproducible.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .pofield import (HALF_WIDTH, IMAGE_SIZE, SIGMA_S, FieldStack, Observation, Points2D, decode,
                      flip_fields, render_fields, unflip_observation)
from .rotation import axis_angle, rodrigues, rotation_log
from .skeleton import Camera, ModelParams, PoseState, hand_skeleton
from .tracking import FlowTargets

SCHEMA = "pofcap.scene/1"
SEQUENCE_SCHEMA = "pofcap.sequence/1"
TRUNCATE = 2.5

# (mean, std) of the axis-angle of the bone ending at each joint, radians.
# Flexion of elbows and hips moves the child bone forward (-z), knees backward.
BODY_POSE_STATS = {
    "Nose": ((0.0, 0.0, 0.0), (0.2, 0.2, 0.15)),
    "RShoulder": ((0.0, 0.0, 0.0), (0.08, 0.05, 0.08)),
    "LShoulder": ((0.0, 0.0, 0.0), (0.08, 0.05, 0.08)),
    "RElbow": ((0.0, 0.0, 0.0), (0.6, 0.3, 0.6)),
    "LElbow": ((0.0, 0.0, 0.0), (0.6, 0.3, 0.6)),
    "RWrist": ((-0.5, 0.0, 0.0), (0.4, 0.3, 0.2)),
    "LWrist": ((-0.5, 0.0, 0.0), (0.4, 0.3, 0.2)),
    "RHip": ((0.0, 0.0, 0.0), (0.05, 0.05, 0.05)),
    "LHip": ((0.0, 0.0, 0.0), (0.05, 0.05, 0.05)),
    "RKnee": ((-0.2, 0.0, 0.0), (0.35, 0.15, 0.15)),
    "LKnee": ((-0.2, 0.0, 0.0), (0.35, 0.15, 0.15)),
    "RAnkle": ((0.35, 0.0, 0.0), (0.3, 0.05, 0.05)),
    "LAnkle": ((0.35, 0.0, 0.0), (0.3, 0.05, 0.05)),
    "REye": ((0.0, 0.0, 0.0), (0.03, 0.03, 0.03)),
    "LEye": ((0.0, 0.0, 0.0), (0.03, 0.03, 0.03)),
    "REar": ((0.0, 0.0, 0.0), (0.03, 0.03, 0.03)),
    "LEar": ((0.0, 0.0, 0.0), (0.03, 0.03, 0.03)),
}
HAND_BASE_STATS = ((0.0, 0.0, 0.0), (0.15, 0.1, 0.15))
HAND_FINGER_STATS = ((0.2, 0.0, 0.0), (0.3, 0.05, 0.1))


class SynthError(ValueError):
    pass


def rng_for(seed, *stream):
    """Independent Philox stream for (seed, purpose...)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    ss = np.random.SeedSequence(key)
    return np.random.Generator(np.random.Philox(ss))


def pose_stats(skel):
    """Per-joint (mean, std) arrays (J, 3); the root gets zeros."""
    mean = np.zeros((skel.n_joints, 3))
    std = np.zeros((skel.n_joints, 3))
    for k, name in enumerate(skel.names):
        if k == skel.root:
            continue
        base = name[2:] if name[:2] in ("L_", "R_") else name
        if base in BODY_POSE_STATS:
            m, s = BODY_POSE_STATS[base]
        elif base.endswith("1"):
            m, s = HAND_BASE_STATS
        else:
            m, s = HAND_FINGER_STATS
        mean[k], std[k] = m, s
    return mean, std


def truncated_normal(rng, shape, limit=TRUNCATE):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > limit
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > limit
    return z


def sample_poses(skel, n, rng, spread=1.0):
    """(n, J, 3) joint rotations; root entries are zero."""
    mean, std = pose_stats(skel)
    z = truncated_normal(rng, (n, skel.n_joints, 3))
    return mean[None] + spread * std[None] * z


def root_rotation(yaw, pitch=0.0, roll=0.0):
    """Axis-angle of R_x(pitch) R_y(yaw) R_z(roll); y is the vertical (down) axis."""
    R = rodrigues(axis_angle([1, 0, 0], pitch)) @ rodrigues(axis_angle([0, 1, 0], yaw)) \
        @ rodrigues(axis_angle([0, 0, 1], roll))
    return rotation_log(R)


def face_basis(n_landmarks, k, seed=0, scale=1.0):
    """Random orthonormal displacement basis (3F, K), times ``scale`` cm.

    Columns are orthonormal when K <= 3F, otherwise rows are.
    """
    rng = rng_for(seed, 7)
    m = 3 * n_landmarks
    G = rng.standard_normal((m, k))
    if k <= m:
        Q, _ = np.linalg.qr(G)
    else:
        Q, _ = np.linalg.qr(G.T)
        Q = Q.T
    return scale * Q


@dataclass(frozen=True)
class NoiseConfig:
    keypoint_sigma: float = 0.0
    pof_sigma: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.keypoint_sigma < 0 or self.pof_sigma < 0:
            raise SynthError("noise sigma must be non-negative")
        if not 0.0 <= self.dropout <= 1.0:
            raise SynthError("dropout must lie in [0, 1]")


@dataclass(frozen=True)
class MotionConfig:
    velocity_bound: float = 0.5
    root_velocity_bound: float = 0.2
    fps: float = 30.0
    freq_range: tuple = (0.3, 1.0)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_frames: int = 1
    camera: Camera = field(default_factory=lambda: Camera.weak(1.8, 184.0, 184.0))
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    model_spec: dict = field(default_factory=lambda: {"kind": "body", "toes": True, "face": False})
    size: tuple = IMAGE_SIZE
    sigma_s: float = SIGMA_S
    half_width: float = HALF_WIDTH
    depth: float = 400.0
    spread: float = 1.0
    shape_std: float = 0.0
    azimuth: float = None
    elevation: float = None
    store_fields: bool = True

    @property
    def model(self):
        from .fitting import build_model
        return build_model(self.model_spec)

    def to_dict(self):
        d = asdict(self)
        d["camera"] = self.camera.to_dict()
        d["size"] = list(self.size)
        d["motion"]["freq_range"] = list(self.motion.freq_range)
        d["model"] = d.pop("model_spec")
        d["schema"] = SCHEMA
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("schema", SCHEMA) != SCHEMA:
            raise SynthError("unsupported scene schema")
        kw = {}
        for k, v in d.items():
            if k == "camera":
                kw[k] = Camera.from_dict(v)
            elif k == "noise":
                kw[k] = NoiseConfig(**v)
            elif k == "motion":
                v = dict(v)
                if "freq_range" in v:
                    v["freq_range"] = tuple(v["freq_range"])
                kw[k] = MotionConfig(**v)
            elif k == "model":
                kw["model_spec"] = dict(v)
            elif k == "size":
                kw[k] = tuple(int(x) for x in v)
            elif k in cls.__dataclass_fields__:
                kw[k] = v
            else:
                raise SynthError(f"unknown scene config key {k!r}")
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class SyntheticFrame:
    params: ModelParams
    joints: np.ndarray
    markers: np.ndarray
    marker_parts: np.ndarray
    parts: np.ndarray

    def to_dict(self):
        return {"params": self.params.to_dict(), "joints": self.joints.tolist()}


def _frame(params, skel):
    state = PoseState(params, skel)
    markers, _ = state.markers(jacobian=False)
    return SyntheticFrame(params, state.pos.copy(), markers, skel.marker_layout()[0],
                          np.array(skel.parts, dtype=int).reshape(-1, 2))


def _center_translation(theta, phi, skel, camera, depth, size, extra=None):
    """Root translation that centres the subject's projected bounding box in the image."""
    probe = ModelParams(theta, phi, (0.0, 0.0, depth))
    pts = PoseState(probe, skel).pos
    if extra is not None:
        pts = np.vstack([pts, extra(probe)])
    h, w = size
    centre = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    if camera.mode == "weak":
        mid = 0.5 * (pts[:, :2].min(axis=0) + pts[:, :2].max(axis=0))
        return np.append((centre - np.array([camera.cx, camera.cy])) / camera.scale - mid, depth)
    ray = (centre - np.array([camera.cx, camera.cy])) / camera.scale
    mid = 0.5 * (pts[:, :2].min(axis=0) + pts[:, :2].max(axis=0))
    return np.append(ray * depth - mid, depth)


def generate_sequence(config):
    """Ground-truth frames for a scene: a prior-feasible start animated by smooth motion."""
    model = config.model
    skel = model.skeleton
    rng = rng_for(config.seed, 1)
    theta0 = sample_poses(skel, 1, rng, config.spread)[0]
    yaw = rng.uniform(-np.pi, np.pi) if config.azimuth is None else math.radians(config.azimuth)
    pitch = rng.normal(0.0, 0.1) if config.elevation is None else math.radians(config.elevation)
    roll = rng.normal(0.0, 0.05)
    phi = np.ones(skel.n_parts)
    if config.shape_std > 0:
        phi = np.clip(1.0 + config.shape_std * truncated_normal(rng, skel.n_parts), 0.5, 1.5)
    sigma = np.zeros(model.k_sigma)
    if model.k_sigma:
        sigma = 0.3 * truncated_normal(rng, model.k_sigma)
    mo = config.motion
    dims = (skel.n_joints, 3)
    freq = rng.uniform(mo.freq_range[0], mo.freq_range[1], dims)
    phase = rng.uniform(0.0, 2.0 * np.pi, dims)
    amp = rng.uniform(0.0, 1.0, dims)
    bound = np.full(dims, float(mo.velocity_bound))
    bound[skel.root] = mo.root_velocity_bound
    angles = np.array([pitch, yaw, roll])
    times = np.arange(config.n_frames) / mo.fps
    toes = model.toes

    def landmark_pts(p):
        if toes is None:
            return np.zeros((0, 3))
        return PoseState(p, skel).attached(toes.anchor, toes.frame, toes.local, False)[0]

    frames, t = [], None
    for tm in times:
        # integral of amp * bound * sin(2 pi f tm + phase)
        w = 2.0 * np.pi * freq
        disp = amp * bound * (np.cos(phase) - np.cos(w * tm + phase)) / w
        theta = theta0 + disp
        theta[skel.root] = root_rotation(angles[1] + disp[skel.root, 1],
                                         angles[0] + disp[skel.root, 0],
                                         angles[2] + disp[skel.root, 2])
        if t is None:
            t = _center_translation(theta, phi, skel, config.camera, config.depth, config.size,
                                    landmark_pts)
        frames.append(_frame(ModelParams(theta, phi, t, sigma), skel))
    return frames


def perturb_keypoints(xy, sigma, rng):
    """Add isotropic Gaussian noise (px).

    The generator is always advanced by the same amount, whatever ``sigma``,
    so scenes that differ only in noise level share their other draws.
    """
    xy = np.asarray(xy, dtype=float)
    return xy + sigma * rng.standard_normal(xy.shape)


def perturb_orientations(orient, sigma, rng):
    """Per-component Gaussian noise on unit vectors, then renormalization."""
    orient = np.asarray(orient, dtype=float)
    noisy = orient + sigma * rng.standard_normal(orient.shape)
    if sigma <= 0:
        return orient.copy()
    n = np.linalg.norm(noisy, axis=1, keepdims=True)
    return np.where(n > 1e-12, noisy / np.maximum(n, 1e-12), orient)


def dropout_mask(n, p, rng):
    """Keep flags: each entry is dropped with probability ``p``."""
    return rng.uniform(size=n) >= p


@dataclass(frozen=True)
class HandCrop:
    """Square crop mapping image px to crop px, ``(p - origin) * scale``.

    ``flip`` marks crops whose fields are stored mirrored (right hands), so
    the hand detector always sees a left hand.
    """

    origin: tuple
    scale: float
    flip: bool

    def to_crop(self, p):
        return (np.asarray(p, float) - np.asarray(self.origin)) * self.scale

    def to_image(self, q):
        return np.asarray(q, float) / self.scale + np.asarray(self.origin)

    def to_dict(self):
        return {"origin": list(self.origin), "scale": self.scale, "flip": self.flip}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["origin"]), float(d["scale"]), bool(d["flip"]))


def hand_crop(points2d, size, flip, margin=1.4):
    pts = np.asarray(points2d, float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = max(float((hi - lo).max()) * margin, 8.0)
    centre = 0.5 * (lo + hi)
    scale = (min(size) - 1) / side
    origin = centre - side / 2.0
    return HandCrop((float(origin[0]), float(origin[1])), float(scale), bool(flip))


def _noisy_points(xy, present, sigma, dropout, rng, size=None):
    xy = perturb_keypoints(xy, sigma, rng)
    present = np.asarray(present, bool) & dropout_mask(len(xy), dropout, rng)
    if size is not None:
        h, w = size
        present &= (xy[:, 0] >= 0) & (xy[:, 0] <= w - 1) & (xy[:, 1] >= 0) & (xy[:, 1] <= h - 1)
    return xy, present


def _render_network(joints3d, joints2d, parts, noise, rng, size, sigma_s, half_width):
    """Noise, dropout and rendering for one detector; returns (FieldStack, degenerate flags)."""
    orient = np.zeros((len(parts), 3))
    for p, (m, n) in enumerate(parts):
        d = joints3d[n] - joints3d[m]
        orient[p] = d / np.linalg.norm(d)
    kp, present = _noisy_points(joints2d, np.ones(len(joints2d), bool), noise.keypoint_sigma,
                                noise.dropout, rng, size)
    orient = perturb_orientations(orient, noise.pof_sigma, rng)
    op = dropout_mask(len(parts), noise.dropout, rng)
    return render_fields(kp, orient, parts, size, sigma_s, half_width, present, op)


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    fields: dict
    observation: Observation
    crops: dict
    degenerate: dict


def render_observation(frame, model, camera, noise=None, rng=None, size=IMAGE_SIZE,
                       sigma_s=SIGMA_S, half_width=HALF_WIDTH):
    """Render detector fields for one frame and decode them.

    Returns a RenderedFrame with the per-network FieldStacks ("body",
    "lhand", "rhand"), the decoded Observation, and hand crop transforms.
    """
    noise = noise or NoiseConfig()
    rng = rng or rng_for(0, 2)
    skel = model.skeleton
    joints = frame.joints
    proj = camera.project(joints)
    fields, crops, degenerate = {}, {}, {}
    obs = None
    if "body" in model.networks:
        nm = model.networks["body"]
        parts = [(int(np.flatnonzero(nm.joint_map == skel.parts[p][0])[0]),
                  int(np.flatnonzero(nm.joint_map == skel.parts[p][1])[0])) for p in nm.part_map]
        fs, deg = _render_network(joints[nm.joint_map], proj[nm.joint_map], parts, noise, rng,
                                  size, sigma_s, half_width)
        fields["body"], degenerate["body"] = fs, deg
        obs = decode(fs, parts)
    hand_parts = hand_skeleton().parts
    for key in ("lhand", "rhand"):
        if key not in model.networks:
            continue
        nm = model.networks[key]
        flip = key == "rhand"
        if "body" in model.networks:
            crop = hand_crop(proj[nm.joint_map], size, flip)
        else:
            crop = HandCrop((0.0, 0.0), 1.0, flip)
        crops[key] = crop
        fs, deg = _render_network(joints[nm.joint_map], crop.to_crop(proj[nm.joint_map]),
                                  hand_parts, noise, rng, size, sigma_s, half_width)
        if flip:
            fs = flip_fields(fs)
        fields[key], degenerate[key] = fs, deg
        hobs = decode_hand(fs, crop)
        if obs is None:
            obs = hobs
        else:
            obs = obs.replace(**{key: hobs})
    if model.toes is not None and obs is not None:
        pts, _ = PoseState(frame.params, skel).attached(model.toes.anchor, model.toes.frame,
                                                        model.toes.local, False)
        xy, present = _noisy_points(camera.project(pts), np.ones(len(pts), bool),
                                    noise.keypoint_sigma, noise.dropout, rng, size)
        obs = obs.replace(toes=Points2D(xy, present))
    if model.face is not None and obs is not None:
        local = model.face_local(frame.params.sigma)
        pts, _ = PoseState(frame.params, skel).attached(model.face.anchor, model.face.frame,
                                                        local, False)
        xy, present = _noisy_points(camera.project(pts), np.ones(len(pts), bool),
                                    noise.keypoint_sigma, noise.dropout, rng, size)
        obs = obs.replace(face=Points2D(xy, present))
    return RenderedFrame(fields, obs, crops, degenerate)


def decode_hand(fields, crop):
    """Decode hand-crop fields (stored mirrored for right hands) into image coordinates."""
    obs = decode(fields, hand_skeleton().parts)
    if crop.flip:
        obs = unflip_observation(obs, fields.size[1])
    return obs.replace(keypoints=crop.to_image(obs.keypoints))


def oracle_flow(frame, camera, sigma_flow=0.0, rng=None, visibility=True):
    """Flow targets: projections of the frame's ground-truth markers plus Gaussian noise.

    With ``visibility`` a marker is valid only when its bone's midpoint lies
    among the nearest half of all bone midpoints by depth.
    """
    xy = camera.project(frame.markers)
    if sigma_flow > 0:
        rng = rng or rng_for(0, 3)
        xy = xy + sigma_flow * rng.standard_normal(xy.shape)
    valid = np.ones(len(xy), bool)
    if visibility and len(frame.parts):
        pos = frame.joints
        mids = 0.5 * (pos[frame.parts[:, 0], 2] + pos[frame.parts[:, 1], 2])
        near = np.zeros(len(mids), bool)
        near[np.argsort(mids, kind="stable")[:math.ceil(len(mids) / 2)]] = True
        valid = near[frame.marker_parts]
    return FlowTargets(np.arange(len(xy)), xy, valid)


def filter_frames(joints_seq, skel, threshold=0.2):
    """Indices of frames whose every bone length is within ``threshold`` of its sequence mean."""
    J = np.asarray(joints_seq, dtype=float)
    if J.ndim != 3 or len(J) == 0:
        return np.zeros(0, dtype=int)
    m = np.array([a for a, _ in skel.parts])
    lengths = np.linalg.norm(J[:, skel.part_child] - J[:, m], axis=2)
    avg = lengths.mean(axis=0)
    dev = np.abs(lengths - avg[None]) / avg[None]
    return np.flatnonzero(np.all(dev <= threshold + 1e-12, axis=1))


def observation_arrays(obs, prefix=""):
    """Flatten an Observation into named (N, 4) / (P, 4) arrays."""
    out = {f"{prefix}kp": np.column_stack([obs.keypoints, obs.confidence, obs.present.astype(float)]),
           f"{prefix}orient": np.column_stack([obs.orientations, obs.orient_present.astype(float)])}
    if obs.toes is not None:
        out["toes"] = obs.toes.to_array()
    if obs.face is not None:
        out["face"] = obs.face.to_array()
    for key in ("lhand", "rhand"):
        hand = getattr(obs, key)
        if hand is not None:
            out.update(observation_arrays(hand, f"{key}_"))
    return out


def _obs_from(arrays, prefix):
    kp = arrays[f"{prefix}kp"]
    orient = arrays[f"{prefix}orient"]
    return Observation(kp[:, :2], kp[:, 2], kp[:, 3] > 0.5, orient[:, :3], orient[:, 3] > 0.5)


def observation_from_arrays(arrays):
    if "kp" in arrays:
        obs = _obs_from(arrays, "")
    else:
        key = "lhand" if "lhand_kp" in arrays else "rhand"
        return _obs_from(arrays, f"{key}_")
    extra = {}
    for key in ("lhand", "rhand"):
        if f"{key}_kp" in arrays:
            extra[key] = _obs_from(arrays, f"{key}_")
    if "toes" in arrays:
        extra["toes"] = Points2D.from_array(arrays["toes"])
    if "face" in arrays:
        extra["face"] = Points2D.from_array(arrays["face"])
    return obs.replace(**extra)


def frame_dir(seq_dir, index):
    return os.path.join(seq_dir, "frames", f"{index:06d}")


def write_sequence(out_dir, config):
    """Generate, render and write a sequence directory; returns the manifest.

    Layout: ``manifest.json``, ``gt.json`` and ``frames/NNNNNN/`` holding the
    decoded observation tensors and, with ``store_fields``, the rendered
    confidence and orientation fields of every detector.
    """
    model = config.model
    frames = generate_sequence(config)
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    entries = []
    for i, fr in enumerate(frames):
        rf = render_observation(fr, model, config.camera, config.noise, rng_for(config.seed, 2, i),
                                config.size, config.sigma_s, config.half_width)
        fdir = frame_dir(out_dir, i)
        os.makedirs(fdir, exist_ok=True)
        files = []
        if config.store_fields:
            for key, fs in rf.fields.items():
                fs.save(os.path.join(fdir, key))
                files += [f"{key}_conf.poft", f"{key}_pof.poft"]
        for name, arr in observation_arrays(rf.observation).items():
            container.save(os.path.join(fdir, f"{name}.poft"), arr)
            files.append(f"{name}.poft")
        entries.append({"index": i, "files": sorted(files),
                        "crops": {k: c.to_dict() for k, c in rf.crops.items()},
                        "degenerate_parts": {k: np.flatnonzero(v).tolist()
                                             for k, v in rf.degenerate.items()}})
    skel = model.skeleton
    gt = {"schema": "pofcap.gt/1", "joint_names": list(skel.names),
          "parts": [list(p) for p in skel.parts], "frames": [f.to_dict() for f in frames]}
    with open(os.path.join(out_dir, "gt.json"), "w") as f:
        json.dump(gt, f)
    manifest = {"schema": SEQUENCE_SCHEMA, "config": config.to_dict(), "n_frames": len(frames),
                "joint_names": list(skel.names), "frames": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


@dataclass
class Sequence:
    path: str
    manifest: dict
    config: SceneConfig
    gt: dict

    @property
    def n_frames(self):
        return self.manifest["n_frames"]

    def gt_params(self, i):
        return ModelParams.from_dict(self.gt["frames"][i]["params"])

    def gt_joints(self):
        return np.array([f["joints"] for f in self.gt["frames"]], dtype=float)

    def gt_frames(self):
        model = self.config.model
        return [_frame(self.gt_params(i), model.skeleton) for i in range(self.n_frames)]

    def observation(self, i):
        """Decode frame ``i`` from its stored fields, or read its stored observation tensors."""
        entry = self.manifest["frames"][i]
        fdir = frame_dir(self.path, i)
        model = self.config.model
        arrays = {}
        for name in entry["files"]:
            if name.endswith("_conf.poft") or name.endswith("_pof.poft"):
                continue
            arrays[name[:-5]] = container.load(os.path.join(fdir, name))
        obs = observation_from_arrays(arrays)
        if "body" in model.networks and FieldStack.exists(os.path.join(fdir, "body")):
            nm = model.networks["body"]
            skel = model.skeleton
            parts = [(int(np.flatnonzero(nm.joint_map == skel.parts[p][0])[0]),
                      int(np.flatnonzero(nm.joint_map == skel.parts[p][1])[0])) for p in nm.part_map]
            dec = decode(FieldStack.load(os.path.join(fdir, "body")), parts)
            obs = obs.replace(keypoints=dec.keypoints, confidence=dec.confidence,
                              present=dec.present, orientations=dec.orientations,
                              orient_present=dec.orient_present)
        for key, crop in entry["crops"].items():
            prefix = os.path.join(fdir, key)
            if FieldStack.exists(prefix):
                hobs = decode_hand(FieldStack.load(prefix), HandCrop.from_dict(crop))
                obs = obs.replace(**{key: hobs}) if "body" in model.networks else hobs
        return obs


def load_sequence(path):
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("schema") != SEQUENCE_SCHEMA:
        raise SynthError(f"{path}: not a sequence directory")
    with open(os.path.join(path, "gt.json")) as f:
        gt = json.load(f)
    return Sequence(path, manifest, SceneConfig.from_dict(manifest["config"]), gt)
