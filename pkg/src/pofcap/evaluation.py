"""Error metrics and evaluation protocols for 3-D joint estimates (cm, camera frame)."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np


class EvalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """Joint positions (J, 3) over a named joint set."""

    joints: np.ndarray
    names: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float).reshape(-1, 3))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != len(self.joints):
                raise EvalError("joint names and positions disagree in length")


def _pair(pred, gt):
    pn = getattr(pred, "names", None)
    gn = getattr(gt, "names", None)
    p = np.asarray(getattr(pred, "joints", pred), dtype=float)
    g = np.asarray(getattr(gt, "joints", gt), dtype=float)
    if pn is not None and gn is not None and tuple(pn) != tuple(gn):
        raise EvalError("joint set mismatch")
    if p.shape != g.shape:
        raise EvalError(f"joint set mismatch: {p.shape} vs {g.shape}")
    return p, g


def mpjpe(pred, gt, alignment="root", root=0):
    """Mean per-joint Euclidean error; ``alignment`` is "none" or "root".

    Accepts (J, 3) arrays or stacks (..., J, 3); the mean runs over everything.
    """
    p, g = _pair(pred, gt)
    if alignment == "root":
        p = p - p[..., root:root + 1, :]
        g = g - g[..., root:root + 1, :]
    elif alignment != "none":
        raise EvalError(f"unknown alignment {alignment!r}")
    return float(np.linalg.norm(p - g, axis=-1).mean())


def per_joint_errors(pred, gt, alignment="root", root=0):
    p, g = _pair(pred, gt)
    if alignment == "root":
        p = p - p[..., root:root + 1, :]
        g = g - g[..., root:root + 1, :]
    return np.linalg.norm(p - g, axis=-1)


def bone_lengths(joints, parts):
    joints = np.asarray(joints, dtype=float)
    parts = np.asarray(parts, dtype=int).reshape(-1, 2)
    return np.linalg.norm(joints[..., parts[:, 1], :] - joints[..., parts[:, 0], :], axis=-1)


def rescale_to_average_skeleton(pred, parts, reference_lengths, root=0):
    """Uniformly scale about the root so the mean bone length matches the reference mean."""
    p = np.asarray(getattr(pred, "joints", pred), dtype=float)
    cur = bone_lengths(p, parts).mean()
    if not cur > 0:
        raise EvalError("cannot rescale a skeleton with zero mean bone length")
    k = float(np.mean(reference_lengths)) / cur
    out = p[root] + k * (p - p[root])
    return PoseEstimate(out, getattr(pred, "names", None)) if isinstance(pred, PoseEstimate) else out


def depth_align(pred, gt_root_depth, root=0, camera_center=(0.0, 0.0, 0.0)):
    """Scale joints about the camera centre so the root depth matches ``gt_root_depth``."""
    p = np.asarray(getattr(pred, "joints", pred), dtype=float)
    c = np.asarray(camera_center, dtype=float)
    dz = p[root, 2] - c[2]
    if abs(dz) < 1e-12:
        raise EvalError("predicted root lies in the camera plane")
    alpha = (float(gt_root_depth) - c[2]) / dz
    out = c + alpha * (p - c)
    out[root, 2] = float(gt_root_depth)
    return PoseEstimate(out, getattr(pred, "names", None)) if isinstance(pred, PoseEstimate) else out


def pck_auc(errors_mm, t_min=20.0, t_max=50.0, n_thresholds=31):
    """PCK curve on a uniform threshold grid and its trapezoid area normalized by the range."""
    e = np.asarray(errors_mm, dtype=float).ravel()
    if not e.size:
        raise EvalError("no errors to evaluate")
    if not t_max > t_min or n_thresholds < 2:
        raise EvalError("need t_max > t_min and at least two thresholds")
    t = np.linspace(t_min, t_max, int(n_thresholds))
    s = np.sort(e)
    curve = np.searchsorted(s, t, side="right") / e.size
    auc = float(np.sum(0.5 * (curve[1:] + curve[:-1]) * np.diff(t)) / (t_max - t_min))
    return {"thresholds": t, "curve": curve, "auc": auc}


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    cluster_mpjpe: np.ndarray
    counts: np.ndarray


def pose_clusters(poses, k=14, seed=0, errors=None, n_init=50, max_iter=300):
    """k-means (k-means++ init) on flattened root-aligned poses.

    ``errors`` (one MPJPE per pose) is averaged per cluster; clusters without
    members report NaN.
    """
    from sklearn.cluster import KMeans

    X = np.asarray(poses, dtype=float)
    n = X.shape[0]
    if k < 1 or k > n:
        raise EvalError(f"k={k} must lie between 1 and the number of poses ({n})")
    flat = X.reshape(n, -1)
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=max_iter,
                random_state=seed).fit(flat)
    labels = km.labels_.astype(int)
    counts = np.bincount(labels, minlength=k)
    per = np.full(k, np.nan)
    if errors is not None:
        errors = np.asarray(errors, dtype=float)
        for c in range(k):
            if counts[c]:
                per[c] = errors[labels == c].mean()
    return ClusterResult(labels, km.cluster_centers_.reshape((k,) + X.shape[1:]), per, counts)


SWEEP_HEADER = ("azimuth", "elevation", "count", "mean_mpjpe_cm", "std_mpjpe_cm", "status")


def view_sweep_report(results, azimuths=None, elevations=None, path=None):
    """Per-cell count, mean and std of errors on an azimuth x elevation grid.

    ``results`` maps (azimuth, elevation) to a list of per-frame errors.
    Cells without errors are reported with status "absent" and empty
    statistics. Returns (rows, global mean, csv text).
    """
    if azimuths is None:
        azimuths = sorted({a for a, _ in results})
    if elevations is None:
        elevations = sorted({e for _, e in results})
    rows = []
    total, count = 0.0, 0
    for el in elevations:
        for az in azimuths:
            errs = np.asarray(results.get((az, el), []), dtype=float)
            if errs.size:
                rows.append({"azimuth": az, "elevation": el, "count": int(errs.size),
                             "mean": float(errs.mean()), "std": float(errs.std()),
                             "status": "ok"})
                total += float(errs.sum())
                count += int(errs.size)
            else:
                rows.append({"azimuth": az, "elevation": el, "count": 0, "mean": None,
                             "std": None, "status": "absent"})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        stats = ["", ""] if r["mean"] is None else [repr(r["mean"]), repr(r["std"])]
        w.writerow([r["azimuth"], r["elevation"], r["count"], *stats, r["status"]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return rows, (total / count if count else math.nan), text


def read_sweep_csv(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return rows


@dataclass(frozen=True, eq=False)
class JointRegressor:
    """Linear map W (Jt, Js) applied identically to x, y and z."""

    W: np.ndarray

    def apply(self, joints):
        return np.einsum("ts,...sc->...tc", self.W, np.asarray(joints, dtype=float))

    def block_matrix(self):
        """The map on flattened (x, y, z)-interleaved coordinates: kron(W, I3)."""
        return np.kron(self.W, np.eye(3))


def fit_joint_regressor(source, target, ridge=1e-6):
    """Ridge least squares for W minimizing sum ||W S_f - T_f||^2 + ridge ||W||^2."""
    S = np.asarray(source, dtype=float)
    T = np.asarray(target, dtype=float)
    if S.ndim != 3 or T.ndim != 3 or S.shape[0] != T.shape[0]:
        raise EvalError("source and target must be (frames, joints, 3) with equal frame counts")
    Sm = S.transpose(1, 0, 2).reshape(S.shape[1], -1)
    Tm = T.transpose(1, 0, 2).reshape(T.shape[1], -1)
    G = Sm @ Sm.T + ridge * np.eye(Sm.shape[0])
    W = np.linalg.solve(G, Sm @ Tm.T).T
    return JointRegressor(W)


def jitter(joints_seq):
    """Mean norm of the second temporal difference over all interior frames and joints."""
    J = np.asarray(joints_seq, dtype=float)
    if len(J) < 3:
        return 0.0
    d2 = J[2:] - 2.0 * J[1:-1] + J[:-2]
    return float(np.linalg.norm(d2, axis=-1).mean())
