"""Recursive temporal refinement of per-frame fits.

Frame i+1 is re-solved starting from its per-frame fit, pulling its surface
markers toward flow targets, its joint depths toward the refined frame i and
its parts toward the observed orientations. Bone scales and expression stay
frozen at the first frame's values.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import container
from .fitting import FitConfig, network_observations, residuals_face, residuals_pof
from .skeleton import PoseState, ProjectionError
from .solver import SolverError, solve_lm


class FlowError(RuntimeError):
    """Raised by flow providers that cannot produce targets for a frame."""


@dataclass(frozen=True, eq=False)
class FlowTargets:
    """Per-marker 2-D targets (px) with validity flags."""

    ids: np.ndarray
    xy: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=int).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (len(ids) == len(xy) == len(valid)):
            raise ValueError("flow target arrays disagree in length")
        if not np.all(np.isfinite(xy[valid])):
            raise ValueError("flow targets must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "valid", valid)

    def to_array(self):
        return np.column_stack([self.ids.astype(float), self.xy, self.valid.astype(float)])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(-1, 4)
        return cls(a[:, 0].round().astype(int), a[:, 1:3], a[:, 3] > 0.5)

    def save(self, path):
        container.save(path, self.to_array())

    @classmethod
    def load(cls, path):
        return cls.from_array(container.load(path))


def identity_provider(skel, camera):
    """Targets equal the current estimate's own marker projections."""
    def provider(prev, cur, index):
        pts, _ = PoseState(cur, skel).markers(jacobian=False)
        xy = camera.project(pts)
        return FlowTargets(np.arange(len(xy)), xy, np.ones(len(xy), bool))
    return provider


def file_provider(paths):
    """Targets read from POFT files, one per frame index (N x 4: id, x, y, valid)."""
    paths = dict(paths) if isinstance(paths, dict) else dict(enumerate(paths))

    def provider(prev, cur, index):
        if index not in paths:
            raise FlowError(f"no flow file for frame {index}")
        try:
            return FlowTargets.load(paths[index])
        except (OSError, ValueError) as e:
            raise FlowError(str(e)) from e
    return provider


def residuals_tex(params, skel, camera, targets, w_tex=1.0, jacobian=False, state=None):
    """sqrt(w) (Pi(marker) - target) for every valid marker (two rows each)."""
    state = state or PoseState(params, skel)
    _, anchor, frame, local = skel.marker_layout()
    sel = targets.valid & (targets.ids >= 0) & (targets.ids < len(anchor))
    ids = targets.ids[sel]
    if not len(ids):
        r = np.zeros(0)
        return (r, np.zeros((0, params.size))) if jacobian else r
    pts, jac = state.attached(anchor[ids], frame[ids], local[ids], jacobian)
    sw = np.sqrt(w_tex)
    r = (sw * (camera.project(pts) - targets.xy[sel])).ravel()
    if not jacobian:
        return r
    J = sw * np.einsum("nij,njk->nik", camera.jacobian(pts), jac).reshape(-1, jac.shape[2])
    J = np.hstack([J, np.zeros((len(J), params.size - J.shape[1]))])
    return r, J


def residuals_dz(params, skel, prev_z, w_dz=0.25, jacobian=False, state=None):
    """sqrt(w) (z_m - z_m(previous frame)) for every joint."""
    state = state or PoseState(params, skel)
    sw = np.sqrt(w_dz)
    if w_dz == 0:
        r = np.zeros(0)
        return (r, np.zeros((0, params.size))) if jacobian else r
    r = sw * (state.pos[:, 2] - np.asarray(prev_z, dtype=float))
    if not jacobian:
        return r
    _, jac = state.joints()
    J = sw * jac[:, 2, :]
    J = np.hstack([J, np.zeros((len(J), params.size - J.shape[1]))])
    return r, J


@dataclass(frozen=True)
class TrackConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    w_tex: float = 1.0
    w_dz: float = 0.25
    w_face: float = 1.0
    pof_balance: tuple = (25.0, 1.0, 1.0)
    pof_unit: float = 900.0
    max_iter: int = 30

    def pof_weight(self, key):
        b = dict(zip(("body", "lhand", "rhand"), self.pof_balance))
        return self.pof_unit * b[key]

    def to_dict(self):
        return {"fit": self.fit.to_dict(), "w_tex": self.w_tex, "w_dz": self.w_dz,
                "w_face": self.w_face, "pof_balance": list(self.pof_balance),
                "pof_unit": self.pof_unit, "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, d):
        kw = {k: d[k] for k in ("w_tex", "w_dz", "w_face", "pof_unit", "max_iter") if k in d}
        if "pof_balance" in d:
            kw["pof_balance"] = tuple(d["pof_balance"])
        if "fit" in d:
            kw["fit"] = FitConfig.from_dict(d["fit"])
        return cls(**kw)


class TrackSystem:
    """Texture, depth-smoothness, orientation and face terms for one frame; theta and t free."""

    def __init__(self, model, camera, observation, targets, prev_z, base, config):
        self.model, self.camera, self.obs = model, camera, observation
        self.targets, self.prev_z, self.base, self.config = targets, prev_z, base, config
        nJ = model.skeleton.n_joints
        free = np.zeros(base.size, bool)
        free[:3 * nJ] = True
        off = 3 * nJ + model.skeleton.n_parts
        free[off:off + 3] = True
        self.free = free
        self.x_base = base.to_vector()

    def evaluate(self, params, jacobian=True):
        skel, cfg = self.model.skeleton, self.config
        state = PoseState(params, skel)
        out = [residuals_tex(params, skel, self.camera, self.targets, cfg.w_tex, jacobian, state),
               residuals_dz(params, skel, self.prev_z, cfg.w_dz, jacobian, state)]
        if self.obs is not None:
            for key, obs, _, pm in network_observations(self.model, self.obs):
                out.append(residuals_pof(params, skel, obs.orientations, cfg.pof_weight(key),
                                         obs.orient_present, pm, jacobian, state,
                                         form=cfg.fit.pof_form))
            if self.model.face is not None and self.obs.face is not None:
                out.append(residuals_face(params, self.model, self.camera, self.obs.face,
                                          cfg.w_face, jacobian, state))
        if not jacobian:
            return np.concatenate(out), None
        return np.concatenate([r for r, _ in out]), np.vstack([J for _, J in out])

    def params_from(self, z):
        x = self.x_base.copy()
        x[self.free] = z
        return self.base.like(x)

    def __call__(self, z, jacobian=True):
        try:
            r, J = self.evaluate(self.params_from(z), jacobian)
        except (ProjectionError, ValueError):
            return np.full(1, np.nan), None
        return r, (J[:, self.free] if jacobian else None)


@dataclass
class TrackResult:
    params: list
    flags: list
    costs: list


def refine_sequence(frames, provider, config=None, model=None):
    """Refine per-frame fits recursively.

    ``frames`` is a list of (observation, init ModelParams). Frame 0 is the
    anchor; every later frame is solved from its own init with phi and sigma
    taken from frame 0. A provider failure leaves that frame unrefined apart
    from the frozen phi and sigma, and flags it.
    """
    config = config or TrackConfig()
    model = model or config.fit.model
    skel = model.skeleton
    camera = config.fit.camera
    if not frames:
        return TrackResult([], [], [])
    anchor = frames[0][1]
    phi, sigma = anchor.phi, anchor.sigma
    out, flags, costs = [anchor], [None], [0.0]
    settings = replace(config.fit.solver, max_iter=config.max_iter)
    for i in range(len(frames) - 1):
        obs, init = frames[i + 1]
        init = init.replace(phi=phi, sigma=sigma)
        prev = out[-1]
        try:
            targets = provider(prev, init, i + 1)
        except Exception as e:  # provider contract: any failure skips the frame
            out.append(init)
            flags.append(f"provider failed: {e}")
            costs.append(float("nan"))
            continue
        prev_z = PoseState(prev, skel).pos[:, 2]
        system = TrackSystem(model, camera, obs, targets, prev_z, init, config)
        try:
            res = solve_lm(system, system.x_base[system.free], settings)
        except SolverError as e:
            out.append(init)
            flags.append(f"solver failed: {e}")
            costs.append(float("nan"))
            continue
        out.append(system.params_from(res.x))
        flags.append(None)
        costs.append(res.cost)
    return TrackResult(out, flags, costs)
