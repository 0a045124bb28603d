"""Pure numpy implementations of the hot kernels.

Signatures and outputs match the compiled ``_kernels`` module exactly; the
package falls back to these when the extension is not built.
"""

import numpy as np

SMALL_ANGLE = 1e-6


def _batch_skew(v):
    z = np.zeros(v.shape[0])
    return np.stack([
        np.stack([z, -v[:, 2], v[:, 1]], axis=-1),
        np.stack([v[:, 2], z, -v[:, 0]], axis=-1),
        np.stack([-v[:, 1], v[:, 0], z], axis=-1),
    ], axis=1)


def _batch_rodrigues_and_jl(theta):
    a = np.linalg.norm(theta, axis=1)
    K = _batch_skew(theta)
    KK = K @ K
    small = a < SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    s1 = np.where(small, 1.0, np.sin(safe) / safe)
    c1 = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    c2 = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / safe**3)
    eye = np.eye(3)[None]
    R = eye + s1[:, None, None] * K + c1[:, None, None] * KK
    Jl = eye + c1[:, None, None] * K + c2[:, None, None] * KK
    return R, Jl


def forward_kinematics(parents, order, offsets, theta, scale, t):
    """Joint positions, global rotations and rotation-derivative axes.

    ``omega[k][:, c]`` is the world-frame axis such that moving theta[k, c]
    rotates every point downstream of joint k about ``omega[k][:, c]``.
    ``order`` lists joints parents-first.
    """
    parents = np.asarray(parents)
    n = parents.shape[0]
    R, Jl = _batch_rodrigues_and_jl(np.asarray(theta, dtype=float))
    pos = np.empty((n, 3))
    rot = np.empty((n, 3, 3))
    omega = np.empty((n, 3, 3))
    for k in order:
        p = parents[k]
        if p < 0:
            rot[k] = R[k]
            omega[k] = Jl[k]
            pos[k] = t
        else:
            rot[k] = rot[p] @ R[k]
            omega[k] = rot[p] @ Jl[k]
            pos[k] = pos[p] + rot[k] @ (scale[k] * offsets[k])
    return pos, rot, omega


_MASKS = {}


def _ancestor_mask(parents):
    key = parents.tobytes()
    if key in _MASKS:
        return _MASKS[key]
    n = len(parents)
    mask = np.zeros((n, n), dtype=bool)
    for k in range(n):
        j = k
        while j >= 0:
            mask[k, j] = True
            j = parents[j]
    _MASKS[key] = mask
    return mask


def attached_jacobian(parents, offsets, pos, rot, omega, anchor, frame, local):
    """Points ``pos[anchor] + rot[frame] @ local`` and their derivatives.

    Returns (points (N,3), d/dtheta (N,3,J*3), d/dscale (N,3,J)). The
    translation derivative is the identity and is not returned.
    """
    parents = np.asarray(parents)
    anchor = np.asarray(anchor)
    frame = np.asarray(frame)
    n_joints = parents.shape[0]
    pts = pos[anchor] + np.einsum("nij,nj->ni", rot[frame], local)
    mask = _ancestor_mask(parents)
    par = np.where(parents < 0, np.arange(n_joints), parents)
    lever = pts[:, None, :] - pos[par][None, :, :]                    # N,J,3
    axes = np.transpose(omega, (0, 2, 1))                              # J,c,3
    d = np.cross(axes[None, :, :, :], lever[:, :, None, :])            # N,J,c,3
    d = d * mask[frame][:, :, None, None]
    dtheta = np.transpose(d, (0, 3, 1, 2)).reshape(len(pts), 3, n_joints * 3)
    bone = np.einsum("jab,jb->ja", rot, offsets)                       # J,3
    smask = mask[anchor] & (parents >= 0)[None, :]
    dscale = np.transpose(bone[None] * smask[:, :, None], (0, 2, 1))
    return pts, dtheta, dscale


def rasterize_segments(sums, counts, channels, starts, ends, values, half_width):
    """Accumulate per-pixel sums/counts of ``values`` over part rectangles.

    A pixel centre x belongs to a segment a->b when 0 <= u.(x-a) <= |b-a| and
    |u_perp.(x-a)| <= half_width. Degenerate segments are skipped.
    """
    h, w = counts.shape[1:]
    for s in range(len(channels)):
        a = starts[s]
        b = ends[s]
        d = b - a
        length = np.hypot(d[0], d[1])
        if length < 1e-9:
            continue
        u = d / length
        lo = np.minimum(a, b) - half_width
        hi = np.maximum(a, b) + half_width
        x0 = max(int(np.floor(lo[0])), 0)
        x1 = min(int(np.ceil(hi[0])), w - 1)
        y0 = max(int(np.floor(lo[1])), 0)
        y1 = min(int(np.ceil(hi[1])), h - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=float)[None, :] - a[0]
        ys = np.arange(y0, y1 + 1, dtype=float)[:, None] - a[1]
        along = u[0] * xs + u[1] * ys
        perp = -u[1] * xs + u[0] * ys
        inside = (along >= 0.0) & (along <= length) & (np.abs(perp) <= half_width)
        c = channels[s]
        counts[c, y0:y1 + 1, x0:x1 + 1] += inside
        for k in range(3):
            sums[c, k, y0:y1 + 1, x0:x1 + 1] += inside * values[s, k]
