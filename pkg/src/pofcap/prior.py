"""Gaussian pose prior: whitening transform A and mean mu, ||A (theta - mu)||^2."""

import json
from dataclasses import dataclass

import numpy as np

from . import container

SCHEMA = "pofcap.prior/1"


class PriorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PosePrior:
    """A (rows x d) and mu (d,) over the pose entries listed in ``joints`` (3 per joint)."""

    A: np.ndarray
    mu: np.ndarray
    joints: tuple = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[1] != mu.size:
            raise PriorError(f"A has {A.shape[1] if A.ndim == 2 else '?'} columns, mu has {mu.size} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(mu))):
            raise PriorError("prior contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "mu", mu)
        if self.joints is not None:
            object.__setattr__(self, "joints", tuple(int(j) for j in self.joints))
            if 3 * len(self.joints) != mu.size:
                raise PriorError("prior dimension must be 3 x number of joints")

    @property
    def dim(self):
        return self.mu.size

    def columns(self):
        """Indices into the flattened theta vector that the prior acts on."""
        return np.array([3 * j + c for j in self.joints for c in range(3)], dtype=int)

    def save(self, prefix):
        container.save(f"{prefix}_A.poft", self.A)
        container.save(f"{prefix}_mu.poft", self.mu)
        with open(f"{prefix}.json", "w") as f:
            json.dump({"schema": SCHEMA, "dim": self.dim, "rows": self.A.shape[0],
                       "joints": list(self.joints) if self.joints is not None else None}, f, indent=2)

    @classmethod
    def load(cls, prefix):
        with open(f"{prefix}.json") as f:
            meta = json.load(f)
        if meta.get("schema") != SCHEMA:
            raise PriorError(f"unsupported prior schema {meta.get('schema')!r}")
        return cls(container.load(f"{prefix}_A.poft"), container.load(f"{prefix}_mu.poft"),
                   meta.get("joints"))


def fit_prior(pose_samples, eps=1e-3, joints=None):
    """Mean and inverse Cholesky factor of (sample covariance + eps I)."""
    X = np.asarray(pose_samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PriorError("need at least 2 pose samples")
    mu = X.mean(axis=0)
    cov = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1]) + eps * np.eye(X.shape[1])
    L = np.linalg.cholesky(cov)
    A = np.linalg.solve(L, np.eye(X.shape[1]))
    return PosePrior(A, mu, joints)


def prior_residual(theta, prior, weight):
    """sqrt(w) A (theta - mu); ``theta`` is the prior's own sub-vector."""
    return np.sqrt(weight) * (prior.A @ (np.asarray(theta, dtype=float) - prior.mu))


_DEFAULTS = {}


def default_priors(model, n_samples=20000, seed=0, eps=1e-3):
    """Priors fitted to synthetic pose samples, one per body region.

    The body prior covers every non-root body joint; each hand prior covers
    its hand's joints.
    """
    from .synth import rng_for, sample_poses
    skel = model.skeleton
    key = (skel.name, skel.n_joints, n_samples, seed, eps)
    if key not in _DEFAULTS:
        poses = sample_poses(skel, n_samples, rng_for(seed, 5))
        out = {}
        for region in ("body", "lhand", "rhand"):
            joints = [k for k in range(skel.n_joints)
                      if skel.regions[k] == region and k != skel.root]
            if not joints:
                continue
            out[region] = fit_prior(poses[:, joints].reshape(n_samples, -1), eps, joints)
        _DEFAULTS[key] = out
    return dict(_DEFAULTS[key])
