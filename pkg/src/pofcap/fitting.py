"""Per-frame objective and staged Levenberg-Marquardt fitting.

The objective is a sum of residual blocks (2-D keypoints, part orientations,
pose priors, toe and face landmarks, shape/expression regularizers). Every
block returns residuals and an analytic Jacobian with columns laid out like
``ModelParams.to_vector``: theta (3J), phi (P), t (3), sigma (K).
"""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .rotation import rotation_log
from .skeleton import (BODY_JOINTS, LEG_JOINTS, TORSO_JOINTS, BodyModel, Camera, ModelParams,
                       PoseState, ProjectionError)
from .solver import LMSettings, SolverError, solve_lm

CONFIG_SCHEMA = "pofcap.fit/1"
RESULT_SCHEMA = "pofcap.fitresult/1"
POF_EPS = 1e-9
DEFAULT_DEPTH = 400.0
BLOCKS = ("kp2d", "pof", "prior", "toes", "face", "reg")
DOWN = np.array([0.0, 1.0, 0.0])


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class Weights:
    w2d_body: float = 1.0
    wpof_body: float = 22500.0
    wprior_body: float = 200.0
    w2d_hand: float = 1.0
    wpof_hand: float = 2500.0
    wprior_hand: float = 10.0
    w_toes: float = 1.0
    w_face: float = 1.0
    w_phi: float = 0.01
    w_sigma: float = 100.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise FitError(f"weight {k} must be non-negative")

    def for_network(self, key):
        if key == "body":
            return self.w2d_body, self.wpof_body
        return self.w2d_hand, self.wpof_hand

    def prior_weight(self, region):
        return self.wprior_body if region == "body" else self.wprior_hand


@dataclass(frozen=True)
class Stage:
    """Joints freed (names, None = all), residual blocks, parameter groups and iteration cap."""

    name: str
    joints: tuple = None
    blocks: tuple = BLOCKS
    free: tuple = ("theta", "phi", "t", "sigma")
    max_iter: int = 100

    def to_dict(self):
        return {"name": self.name, "joints": None if self.joints is None else list(self.joints),
                "blocks": list(self.blocks), "free": list(self.free), "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, d):
        joints = d.get("joints")
        return cls(d["name"], None if joints is None else tuple(joints),
                   tuple(d.get("blocks", BLOCKS)), tuple(d.get("free", ("theta", "phi", "t", "sigma"))),
                   int(d.get("max_iter", 100)))


def default_schedule(model):
    """Torso, then all body joints, then everything (hand models: palm, then everything)."""
    names = model.skeleton.names
    if "Neck" in names:
        return (Stage("torso", TORSO_JOINTS, ("kp2d", "pof", "prior"), ("theta", "t")),
                Stage("limbs", BODY_JOINTS, ("kp2d", "pof", "prior"), ("theta", "t")),
                Stage("full"))
    palm = tuple(n for n in names if n == "Wrist" or n.endswith("1"))
    return (Stage("palm", palm, ("kp2d", "pof", "prior"), ("theta", "t")), Stage("full"))


def check_schedule(schedule):
    if not schedule:
        raise FitError("empty stage schedule")
    last = schedule[-1]
    if last.joints is not None or set(last.blocks) != set(BLOCKS):
        raise FitError("the final stage must free all joints and activate all blocks")
    prev = set()
    for st in schedule:
        if st.joints is None:
            prev = None
            continue
        if prev is None or not prev <= set(st.joints):
            raise FitError(f"stage {st.name!r}: joint sets must be nested")
        prev = set(st.joints)


_MODELS = {}


def build_model(spec):
    key = json.dumps(spec, sort_keys=True)
    if key not in _MODELS:
        kind = spec.get("kind", "body")
        basis = spec.get("face_basis")
        if isinstance(basis, str):
            from . import container
            basis = container.load(basis).astype(float)
        elif basis is not None:
            basis = np.asarray(basis, dtype=float)
        elif spec.get("k_sigma", 0) > 0:
            from .skeleton import face_landmarks
            from .synth import face_basis
            n_face = len(face_landmarks(BodyModel.body(False).skeleton))
            basis = face_basis(n_face, int(spec["k_sigma"]), int(spec.get("basis_seed", 0)),
                               float(spec.get("basis_scale", 1.0)))
        if kind == "body":
            m = BodyModel.body(spec.get("toes", True), spec.get("face", False), basis)
        elif kind == "total":
            m = BodyModel.total(spec.get("toes", True), spec.get("face", True), basis)
        elif kind == "hand":
            m = BodyModel.hand(spec.get("side", "left"))
        else:
            raise FitError(f"unknown model kind {kind!r}")
        _MODELS[key] = m
    return _MODELS[key]


@dataclass(frozen=True)
class FitConfig:
    weights: Weights = field(default_factory=Weights)
    schedule: tuple = None
    solver: LMSettings = field(default_factory=LMSettings)
    camera: Camera = field(default_factory=lambda: Camera.weak(1.8, 184.0, 184.0))
    model_spec: dict = field(default_factory=lambda: {"kind": "body", "toes": True, "face": False})
    priors: object = "default"
    depth: float = DEFAULT_DEPTH
    pof_form: str = "chord"

    @property
    def model(self):
        return build_model(self.model_spec)

    def stages(self):
        sched = self.schedule if self.schedule is not None else default_schedule(self.model)
        check_schedule(sched)
        return sched

    def prior_set(self):
        """Region -> PosePrior; None disables the prior blocks."""
        from .prior import PosePrior, default_priors
        if self.priors is None:
            return {}
        if self.priors == "default":
            return default_priors(self.model)
        if isinstance(self.priors, dict):
            return {k: (v if isinstance(v, PosePrior) else PosePrior.load(v))
                    for k, v in self.priors.items()}
        raise FitError("priors must be 'default', null or a mapping of region to prefix")

    def to_dict(self):
        priors = self.priors
        if isinstance(priors, dict):
            priors = {k: v for k, v in priors.items() if isinstance(v, str)}
        return {"schema": CONFIG_SCHEMA, "weights": asdict(self.weights),
                "schedule": None if self.schedule is None else [s.to_dict() for s in self.schedule],
                "solver": self.solver.to_dict(), "camera": self.camera.to_dict(),
                "model": dict(self.model_spec), "priors": priors, "depth": self.depth,
                "pof_form": self.pof_form}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise FitError(f"unsupported fit config schema {d.get('schema')!r}")
        kw = {}
        if "weights" in d:
            kw["weights"] = Weights(**d["weights"])
        if d.get("schedule") is not None:
            kw["schedule"] = tuple(Stage.from_dict(s) for s in d["schedule"])
        if "solver" in d:
            kw["solver"] = LMSettings.from_dict(d["solver"])
        if "camera" in d:
            kw["camera"] = Camera.from_dict(d["camera"])
        if "model" in d:
            kw["model_spec"] = dict(d["model"])
        if "priors" in d:
            kw["priors"] = d["priors"]
        if "depth" in d:
            kw["depth"] = float(d["depth"])
        if "pof_form" in d:
            kw["pof_form"] = str(d["pof_form"])
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


@dataclass
class FitResult:
    params: ModelParams
    cost: float
    block_costs: dict
    iterations: int
    converged: bool
    stages: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {"schema": RESULT_SCHEMA, "params": self.params.to_dict(), "cost": self.cost,
                "block_costs": self.block_costs, "iterations": self.iterations,
                "converged": self.converged, "stages": self.stages, "flags": self.flags}

    @classmethod
    def from_dict(cls, d):
        return cls(ModelParams.from_dict(d["params"]), d["cost"], d["block_costs"],
                   d["iterations"], d["converged"], d.get("stages", []), d.get("flags", []))


def _points_arrays(obs):
    """(xy, confidence, present) of an Observation or Points2D."""
    xy = obs.keypoints if hasattr(obs, "keypoints") else obs.xy
    return np.asarray(xy, float).reshape(-1, 2), np.asarray(obs.confidence, float), \
        np.asarray(obs.present, bool)


def _project_rows(camera, pts, jac, xy, conf, weight, n_cols):
    """Rows sqrt(w) c (j - Pi(X)) for matched points; jac is d(X)/d(params) or None."""
    sw = np.sqrt(weight) * conf
    r = (sw[:, None] * (xy - camera.project(pts))).ravel()
    if jac is None:
        return r, None
    Jp = camera.jacobian(pts)
    J = -(sw[:, None, None] * np.einsum("nij,njk->nik", Jp, jac))
    J = J.reshape(-1, jac.shape[2])
    if J.shape[1] < n_cols:
        J = np.hstack([J, np.zeros((len(J), n_cols - J.shape[1]))])
    return r, J


def _keypoint_pairs(obs, joint_map, active=None):
    xy, conf, present = _points_arrays(obs)
    joint_map = np.asarray(joint_map, dtype=int)
    keep = present[:len(joint_map)] & (joint_map >= 0)
    if active is not None:
        keep &= np.isin(joint_map, active)
    idx = np.flatnonzero(keep)
    return idx, joint_map[idx], xy[idx], conf[idx]


def residuals_keypoints2d(params, skel, camera, keypoints, joint_map=None, weight=1.0,
                          jacobian=False, state=None, active=None):
    """sqrt(w) c_m (j_m - Pi(J_m)) for every present, mapped keypoint (two rows each)."""
    state = state or PoseState(params, skel)
    if joint_map is None:
        joint_map = np.arange(skel.n_joints)
    _, model_idx, xy, conf = _keypoint_pairs(keypoints, joint_map, active)
    if not len(model_idx):
        r = np.zeros(0)
        return (r, np.zeros((0, params.size))) if jacobian else r
    pts, jac = state.attached(model_idx, model_idx, np.zeros((len(model_idx), 3)), jacobian)
    r, J = _project_rows(camera, pts, jac, xy, conf, weight, params.size)
    return (r, J) if jacobian else r


def residuals_landmarks2d(params, skel, camera, landmarks, points, weight=1.0, jacobian=False,
                          state=None):
    """Keypoint rows for rigidly attached landmarks (toes)."""
    state = state or PoseState(params, skel)
    xy, conf, present = _points_arrays(points)
    idx = np.flatnonzero(present[:len(landmarks)])
    if not len(idx):
        r = np.zeros(0)
        return (r, np.zeros((0, params.size))) if jacobian else r
    pts, jac = state.attached(landmarks.anchor[idx], landmarks.frame[idx],
                              landmarks.local[idx], jacobian)
    r, J = _project_rows(camera, pts, jac, xy[idx], conf[idx], weight, params.size)
    return (r, J) if jacobian else r


def residuals_face(params, model, camera, face_kps, weight=1.0, jacobian=False, state=None):
    """Face landmark rows; landmark offsets are the head-frame template plus basis @ sigma."""
    skel = model.skeleton
    state = state or PoseState(params, skel)
    face = model.face
    empty = np.zeros(0)
    if face is None or face_kps is None:
        return (empty, np.zeros((0, params.size))) if jacobian else empty
    xy, conf, present = _points_arrays(face_kps)
    idx = np.flatnonzero(present[:len(face)])
    if not len(idx):
        return (empty, np.zeros((0, params.size))) if jacobian else empty
    local = model.face_local(params.sigma)[idx]
    pts, jac = state.attached(face.anchor[idx], face.frame[idx], local, jacobian)
    if jacobian:
        K = len(params.sigma)
        B = model.face_basis.reshape(len(face), 3, K)[idx]
        dsig = np.einsum("nij,njk->nik", state.rot[face.frame[idx]], B)
        jac = np.concatenate([jac, dsig], axis=2)
    r, J = _project_rows(camera, pts, jac, xy[idx], conf[idx], weight, params.size)
    return (r, J) if jacobian else r


def residuals_pof(params, skel, orientations, weight=1.0, present=None, part_map=None,
                  jacobian=False, state=None, active=None, form="scalar"):
    """Orientation residuals for every present, mapped part.

    ``form="scalar"`` gives one row sqrt(w) sqrt(1 - clamp(P_hat . P_model))
    per part. ``form="chord"`` gives three rows sqrt(w / 2) (P_model - P_hat),
    whose squared norm is the same w (1 - P_hat . P_model) but which is smooth
    at the optimum, so Gauss-Newton sees the full curvature.
    """
    if form not in ("scalar", "chord"):
        raise FitError(f"unknown POF residual form {form!r}")
    state = state or PoseState(params, skel)
    orientations = np.asarray(orientations, float).reshape(-1, 3)
    present = np.ones(len(orientations), bool) if present is None else np.asarray(present, bool)
    part_map = np.arange(len(orientations)) if part_map is None else np.asarray(part_map, int)
    keep = present[:len(part_map)] & (part_map >= 0)
    idx = np.flatnonzero(keep)
    parts = part_map[idx]
    if active is not None and len(parts):
        m = np.array([skel.parts[p][0] for p in parts])
        n = skel.part_child[parts]
        ok = np.isin(m, active) & np.isin(n, active)
        idx, parts = idx[ok], parts[ok]
    if not len(parts):
        r = np.zeros(0)
        return (r, np.zeros((0, params.size))) if jacobian else r
    m = np.array([skel.parts[p][0] for p in parts], dtype=np.int32)
    n = skel.part_child[parts]
    obs = orientations[idx]
    d = state.pos[n] - state.pos[m]
    length = np.linalg.norm(d, axis=1)
    u = d / length[:, None]
    if form == "chord":
        sw = np.sqrt(weight / 2.0)
        r = (sw * (u - obs)).ravel()
        if not jacobian:
            return r
        both = np.concatenate([m, n])
        _, jac = state.attached(both, both, np.zeros((len(both), 3)))
        dd = jac[len(m):] - jac[:len(m)]
        proj = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / length[:, None, None]
        J = (sw * np.einsum("nij,njk->nik", proj, dd)).reshape(-1, dd.shape[2])
        if J.shape[1] < params.size:
            J = np.hstack([J, np.zeros((len(J), params.size - J.shape[1]))])
        return r, J
    dot = np.clip(np.einsum("ni,ni->n", obs, u), -1.0, 1.0)
    sw = np.sqrt(weight)
    r = sw * np.sqrt(np.maximum(1.0 - dot, 0.0))
    if not jacobian:
        return r
    both = np.concatenate([m, n])
    _, jac = state.attached(both, both, np.zeros((len(both), 3)))
    dd = jac[len(m):] - jac[:len(m)]
    # d(u)/d(d) = (I - u u^T) / |d|;  d(dot) = obs^T d(u)
    g = (obs - dot[:, None] * u) / length[:, None]
    ddot = np.einsum("ni,nik->nk", g, dd)
    coef = -sw / (2.0 * np.sqrt(1.0 - dot + POF_EPS))
    J = coef[:, None] * ddot
    if J.shape[1] < params.size:
        J = np.hstack([J, np.zeros((len(J), params.size - J.shape[1]))])
    return r, J


def residuals_prior(params, prior, weight, jacobian=False):
    cols = prior.columns()
    sw = np.sqrt(weight)
    r = sw * (prior.A @ (params.theta.ravel()[cols] - prior.mu))
    if not jacobian:
        return r
    J = np.zeros((len(r), params.size))
    J[:, cols] = sw * prior.A
    return r, J


def residuals_regularizers(params, weights, jacobian=False):
    """sqrt(w_phi) (phi - 1) followed by sqrt(w_sigma) sigma."""
    nP, K = len(params.phi), len(params.sigma)
    a, b = np.sqrt(weights.w_phi), np.sqrt(weights.w_sigma)
    r = np.concatenate([a * (params.phi - 1.0), b * params.sigma])
    if not jacobian:
        return r
    J = np.zeros((nP + K, params.size))
    off = params.theta.size
    J[np.arange(nP), off + np.arange(nP)] = a
    off += nP + 3
    J[nP + np.arange(K), off + np.arange(K)] = b
    return r, J


def network_observations(model, observation):
    """(network key, Observation, joint_map, part_map) for every detector the model uses.

    Applies the wrist rule: in a body+hands model the hand network's root
    keypoint is dropped and the body network's wrist is used instead.
    """
    out = []
    combined = "body" in model.networks
    for key, nm in model.networks.items():
        if key == "body" or not combined:
            obs = observation
        else:
            obs = getattr(observation, key, None)
        if obs is None:
            continue
        jm = nm.joint_map.copy()
        if combined and key != "body":
            jm[0] = -1
        out.append((key, obs, jm, nm.part_map))
    return out


class ResidualSystem:
    """The residual blocks of one stage with a mask of free parameters.

    Calling the system with the free sub-vector returns (r, J) restricted to
    the free columns, which is what ``solve_lm`` expects.
    """

    def __init__(self, model, camera, observation, priors, weights, stage, base, pof_form="chord"):
        self.pof_form = pof_form
        self.model = model
        self.camera = camera
        self.observation = observation
        self.priors = priors
        self.weights = weights
        self.stage = stage
        self.base = base
        skel = model.skeleton
        if stage.joints is None:
            active = np.arange(skel.n_joints)
        else:
            active = np.array(sorted(skel.index(n) for n in stage.joints if n in skel.names))
        self.active = active
        nJ, nP = skel.n_joints, skel.n_parts
        free = np.zeros(base.size, bool)
        if "theta" in stage.free:
            for j in active:
                free[3 * j:3 * j + 3] = True
        if "phi" in stage.free:
            free[3 * nJ:3 * nJ + nP] = True
        if "t" in stage.free:
            free[3 * nJ + nP:3 * nJ + nP + (2 if camera.mode == "weak" else 3)] = True
        if "sigma" in stage.free:
            free[3 * nJ + nP + 3:] = True
        self.free = free
        self.x_base = base.to_vector()
        self.prior_items = [(reg, p) for reg, p in priors.items()
                            if "prior" in stage.blocks and np.isin(p.joints, active).any()]
        r, _ = self.evaluate(base, jacobian=False)
        self.data_rows = sum(len(v) for k, v in self._last_blocks.items()
                             if k in ("kp2d", "pof", "toes", "face"))
        if self.data_rows == 0:
            raise FitError("no constraints: every observation in this stage is absent")

    @property
    def n_rows(self):
        return sum(len(v) for v in self._last_blocks.values())

    def evaluate(self, params, jacobian=True):
        model, skel, w = self.model, self.model.skeleton, self.weights
        blocks = self.stage.blocks
        state = PoseState(params, skel)
        rs, Js, named = [], [], {}
        last = self.stage.joints is None

        def add(name, out):
            r, J = out if jacobian else (out, None)
            rs.append(r)
            if jacobian:
                Js.append(J)
            named.setdefault(name, []).append(r)

        act = None if last else self.active
        for key, obs, jm, pm in network_observations(model, self.observation):
            w2d, wpof = w.for_network(key)
            if "kp2d" in blocks:
                add("kp2d", residuals_keypoints2d(params, skel, self.camera, obs, jm, w2d,
                                                  jacobian, state, act))
            if "pof" in blocks:
                add("pof", residuals_pof(params, skel, obs.orientations, wpof, obs.orient_present,
                                         pm, jacobian, state, act, self.pof_form))
        if "prior" in blocks:
            for reg, p in self.prior_items:
                add("prior", residuals_prior(params, p, w.prior_weight(reg), jacobian))
        if "toes" in blocks and model.toes is not None and self.observation.toes is not None:
            add("toes", residuals_landmarks2d(params, skel, self.camera, model.toes,
                                              self.observation.toes, w.w_toes, jacobian, state))
        if "face" in blocks and model.face is not None and self.observation.face is not None:
            add("face", residuals_face(params, model, self.camera, self.observation.face,
                                       w.w_face, jacobian, state))
        if "reg" in blocks:
            add("reg", residuals_regularizers(params, w, jacobian))
        self._last_blocks = {k: np.concatenate(v) for k, v in named.items()}
        r = np.concatenate(rs) if rs else np.zeros(0)
        if not jacobian:
            return r, None
        J = np.vstack(Js) if Js else np.zeros((0, params.size))
        return r, J

    def block_costs(self, params):
        self.evaluate(params, jacobian=False)
        return {k: float(v @ v) for k, v in self._last_blocks.items()}

    def params_from(self, z):
        x = self.x_base.copy()
        x[self.free] = z
        return self.base.like(x)

    def initial(self):
        return self.x_base[self.free].copy()

    def __call__(self, z, jacobian=True):
        try:
            params = self.params_from(z)
            r, J = self.evaluate(params, jacobian)
        except (ProjectionError, ValueError):
            return np.full(1, np.nan), None
        return r, (J[:, self.free] if jacobian else None)


def assemble(stage, observation, params, config, model=None, priors=None):
    model = model or config.model
    priors = config.prior_set() if priors is None else priors
    if observation is None or observation.is_empty():
        raise FitError("no constraints: observation is empty")
    return ResidualSystem(model, config.camera, observation, priors, config.weights, stage, params,
                          config.pof_form)


def _root_keypoint(model, observation):
    skel = model.skeleton
    for key, obs, jm, _ in network_observations(model, observation):
        hit = np.flatnonzero((np.asarray(jm) == skel.root) & obs.present[:len(jm)])
        if len(hit):
            return obs.keypoints[hit[0]]
    pts = [o.keypoints[o.present] for _, o, _, _ in network_observations(model, observation)]
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    if not len(pts):
        raise FitError("no constraints: no keypoints to place the root")
    return pts.mean(axis=0)


def _initial_root_rotation(model, observation, theta):
    """Rotation aligning the template root-children directions with observed orientations."""
    skel = model.skeleton
    rest = ModelParams(theta, np.ones(skel.n_parts), np.zeros(3), np.zeros(model.k_sigma))
    pos = PoseState(rest, skel).pos
    src, dst = [], []
    for key, obs, jm, pm in network_observations(model, observation):
        for q, p in enumerate(pm):
            if p < 0 or q >= len(obs.orient_present) or not obs.orient_present[q]:
                continue
            m, n = skel.parts[p]
            if m != skel.root:
                continue
            d = pos[n] - pos[m]
            src.append(d / np.linalg.norm(d))
            dst.append(obs.orientations[q])
    if len(src) < 2:
        return np.zeros(3)
    src, dst = np.array(src), np.array(dst)
    if np.linalg.matrix_rank(src, tol=1e-6) < 2:
        return np.zeros(3)
    U, _, Vt = np.linalg.svd(src.T @ dst)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    return rotation_log(Vt.T @ D @ U.T)


def default_init(observation, config, model=None, priors=None):
    """theta = prior mean (root from torso orientations), phi = 1, sigma = 0, root on its keypoint."""
    model = model or config.model
    priors = config.prior_set() if priors is None else priors
    skel = model.skeleton
    theta = np.zeros((skel.n_joints, 3))
    for p in priors.values():
        theta.ravel()[p.columns()] = p.mu
    theta[skel.root] = _initial_root_rotation(model, observation, theta)
    kp = _root_keypoint(model, observation)
    cam = config.camera
    c = np.array([cam.cx, cam.cy])
    if cam.mode == "weak":
        t = np.append((kp - c) / cam.scale, config.depth)
    else:
        t = config.depth * np.append((kp - c) / cam.scale, 1.0)
    return ModelParams(theta, np.ones(skel.n_parts), t, np.zeros(model.k_sigma))


def fit_frame(observation, config, init=None, model=None, priors=None):
    """Run the stage schedule, each stage warm-starting the next."""
    model = model or config.model
    priors = config.prior_set() if priors is None else priors
    if observation is None or observation.is_empty():
        raise FitError("no constraints: observation is empty")
    params = init if init is not None else default_init(observation, config, model, priors)
    params.check(model.skeleton, model.k_sigma)
    reports, total_it, flags = [], 0, []
    system = None
    for stage in config.stages():
        settings = replace(config.solver, max_iter=min(config.solver.max_iter, stage.max_iter))
        system = assemble(stage, observation, params, config, model, priors)
        res = solve_lm(system, system.initial(), settings)
        params = system.params_from(res.x)
        total_it += res.iterations
        reports.append({"name": stage.name, "initial_cost": res.initial_cost, "cost": res.cost,
                        "iterations": res.iterations, "converged": res.converged,
                        "message": res.message})
        if not res.converged:
            flags.append(f"stage {stage.name} did not converge: {res.message}")
    costs = system.block_costs(params)
    return FitResult(params, float(sum(costs.values())), costs, total_it,
                     all(r["converged"] for r in reports), reports, flags)


def objective_cost(observation, params, config, model=None, priors=None):
    """Full (final-stage) objective at ``params``."""
    model = model or config.model
    priors = config.prior_set() if priors is None else priors
    system = assemble(config.stages()[-1], observation, params, config, model, priors)
    return float(sum(system.block_costs(params).values()))


def inject_vertical_orientations(observation, model, joints=LEG_JOINTS + ("RHip", "LHip")):
    """Mark absent body parts ending at ``joints`` as pointing straight down (+y)."""
    nm = model.networks["body"]
    skel = model.skeleton
    orient = observation.orientations.copy()
    present = observation.orient_present.copy()
    targets = {skel.index(n) for n in joints}
    for q, p in enumerate(nm.part_map):
        if p >= 0 and skel.part_child[p] in targets and not present[q]:
            orient[q] = DOWN
            present[q] = True
    return observation.replace(orientations=orient, orient_present=present)


__all__ = ["Weights", "Stage", "FitConfig", "FitResult", "FitError", "SolverError",
           "default_schedule", "residuals_keypoints2d", "residuals_landmarks2d", "residuals_face",
           "residuals_pof", "residuals_prior", "residuals_regularizers", "assemble",
           "fit_frame", "default_init", "objective_cost", "inject_vertical_orientations",
           "network_observations", "solve_lm"]
