# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: forward kinematics, attached-point Jacobians, part rasterization."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, floor, ceil, fabs

cnp.import_array()

cdef double SMALL_ANGLE = 1e-6


cdef void _rod_jl(double tx, double ty, double tz, double* R, double* Jl) noexcept nogil:
    cdef double a = sqrt(tx * tx + ty * ty + tz * tz)
    cdef double s1, c1, c2, a2
    cdef double K[9]
    cdef double KK[9]
    cdef int i, j, k
    K[0] = 0.0; K[1] = -tz; K[2] = ty
    K[3] = tz; K[4] = 0.0; K[5] = -tx
    K[6] = -ty; K[7] = tx; K[8] = 0.0
    for i in range(3):
        for j in range(3):
            KK[3 * i + j] = 0.0
            for k in range(3):
                KK[3 * i + j] += K[3 * i + k] * K[3 * k + j]
    if a < SMALL_ANGLE:
        s1 = 1.0
        c1 = 0.5
        c2 = 1.0 / 6.0
    else:
        a2 = a * a
        s1 = sin(a) / a
        c1 = (1.0 - cos(a)) / a2
        c2 = (a - sin(a)) / (a2 * a)
    for i in range(9):
        R[i] = s1 * K[i] + c1 * KK[i]
        Jl[i] = c1 * K[i] + c2 * KK[i]
    R[0] += 1.0; R[4] += 1.0; R[8] += 1.0
    Jl[0] += 1.0; Jl[4] += 1.0; Jl[8] += 1.0


def forward_kinematics(parents, order, offsets, theta, scale, t):
    cdef const int[::1] par = np.ascontiguousarray(parents, dtype=np.int32)
    cdef const int[::1] ordr = np.ascontiguousarray(order, dtype=np.int32)
    cdef const double[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] sc = np.ascontiguousarray(scale, dtype=np.float64)
    cdef const double[::1] tr = np.ascontiguousarray(t, dtype=np.float64)
    cdef Py_ssize_t n = par.shape[0]
    pos_a = np.empty((n, 3))
    rot_a = np.empty((n, 3, 3))
    omega_a = np.empty((n, 3, 3))
    cdef double[:, ::1] pos = pos_a
    cdef double[:, :, ::1] rot = rot_a
    cdef double[:, :, ::1] omega = omega_a
    cdef double R[9]
    cdef double Jl[9]
    cdef double v[3]
    cdef Py_ssize_t kk, k, i, j, m
    cdef int p
    with nogil:
        for kk in range(n):
            k = ordr[kk]
            _rod_jl(th[k, 0], th[k, 1], th[k, 2], R, Jl)
            p = par[k]
            if p < 0:
                for i in range(3):
                    pos[k, i] = tr[i]
                    for j in range(3):
                        rot[k, i, j] = R[3 * i + j]
                        omega[k, i, j] = Jl[3 * i + j]
            else:
                for i in range(3):
                    for j in range(3):
                        rot[k, i, j] = 0.0
                        omega[k, i, j] = 0.0
                        for m in range(3):
                            rot[k, i, j] += rot[p, i, m] * R[3 * m + j]
                            omega[k, i, j] += rot[p, i, m] * Jl[3 * m + j]
                for i in range(3):
                    v[i] = 0.0
                    for m in range(3):
                        v[i] += rot[k, i, m] * (sc[k] * off[k, m])
                    pos[k, i] = pos[p, i] + v[i]
    return pos_a, rot_a, omega_a


def attached_jacobian(parents, offsets, pos, rot, omega, anchor, frame, local):
    cdef const int[::1] par = np.ascontiguousarray(parents, dtype=np.int32)
    cdef const double[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[:, ::1] P = np.ascontiguousarray(pos, dtype=np.float64)
    cdef const double[:, :, ::1] G = np.ascontiguousarray(rot, dtype=np.float64)
    cdef const double[:, :, ::1] W = np.ascontiguousarray(omega, dtype=np.float64)
    cdef const int[::1] anc = np.ascontiguousarray(anchor, dtype=np.int32)
    cdef const int[::1] frm = np.ascontiguousarray(frame, dtype=np.int32)
    cdef const double[:, ::1] loc = np.ascontiguousarray(local, dtype=np.float64)
    cdef Py_ssize_t nj = par.shape[0]
    cdef Py_ssize_t npts = anc.shape[0]
    pts_a = np.empty((npts, 3))
    dth_a = np.zeros((npts, 3, nj * 3))
    dsc_a = np.zeros((npts, 3, nj))
    cdef double[:, ::1] pts = pts_a
    cdef double[:, :, ::1] dth = dth_a
    cdef double[:, :, ::1] dsc = dsc_a
    cdef Py_ssize_t n, i, m, c
    cdef int j, q
    cdef double lx, ly, lz, wx, wy, wz
    with nogil:
        for n in range(npts):
            for i in range(3):
                pts[n, i] = P[anc[n], i]
                for m in range(3):
                    pts[n, i] += G[frm[n], i, m] * loc[n, m]
            j = frm[n]
            while j >= 0:
                q = par[j]
                if q < 0:
                    q = j
                lx = pts[n, 0] - P[q, 0]
                ly = pts[n, 1] - P[q, 1]
                lz = pts[n, 2] - P[q, 2]
                for c in range(3):
                    wx = W[j, 0, c]
                    wy = W[j, 1, c]
                    wz = W[j, 2, c]
                    dth[n, 0, 3 * j + c] = wy * lz - wz * ly
                    dth[n, 1, 3 * j + c] = wz * lx - wx * lz
                    dth[n, 2, 3 * j + c] = wx * ly - wy * lx
                j = par[j]
            j = anc[n]
            while par[j] >= 0:
                for i in range(3):
                    dsc[n, i, j] = 0.0
                    for m in range(3):
                        dsc[n, i, j] += G[j, i, m] * off[j, m]
                j = par[j]
    return pts_a, dth_a, dsc_a


def rasterize_segments(sums, counts, channels, starts, ends, values, double half_width):
    cdef double[:, :, :, ::1] S = sums
    cdef int[:, :, ::1] C = counts
    cdef const int[::1] ch = np.ascontiguousarray(channels, dtype=np.int32)
    cdef const double[:, ::1] A = np.ascontiguousarray(starts, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(ends, dtype=np.float64)
    cdef const double[:, ::1] V = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t h = C.shape[1]
    cdef Py_ssize_t w = C.shape[2]
    cdef Py_ssize_t s, x, y, x0, x1, y0, y1
    cdef double dx, dy, length, ux, uy, px, py, along, perp
    with nogil:
        for s in range(ch.shape[0]):
            dx = B[s, 0] - A[s, 0]
            dy = B[s, 1] - A[s, 1]
            length = sqrt(dx * dx + dy * dy)
            if length < 1e-9:
                continue
            ux = dx / length
            uy = dy / length
            x0 = <Py_ssize_t>floor(min(A[s, 0], B[s, 0]) - half_width)
            x1 = <Py_ssize_t>ceil(max(A[s, 0], B[s, 0]) + half_width)
            y0 = <Py_ssize_t>floor(min(A[s, 1], B[s, 1]) - half_width)
            y1 = <Py_ssize_t>ceil(max(A[s, 1], B[s, 1]) + half_width)
            if x0 < 0:
                x0 = 0
            if y0 < 0:
                y0 = 0
            if x1 > w - 1:
                x1 = w - 1
            if y1 > h - 1:
                y1 = h - 1
            for y in range(y0, y1 + 1):
                py = <double>y - A[s, 1]
                for x in range(x0, x1 + 1):
                    px = <double>x - A[s, 0]
                    along = ux * px + uy * py
                    perp = -uy * px + ux * py
                    if along >= 0.0 and along <= length and fabs(perp) <= half_width:
                        C[ch[s], y, x] += 1
                        S[ch[s], 0, y, x] += V[s, 0]
                        S[ch[s], 1, y, x] += V[s, 1]
                        S[ch[s], 2, y, x] += V[s, 2]
