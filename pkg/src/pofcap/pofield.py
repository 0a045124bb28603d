"""Joint confidence maps and part orientation fields: rendering and decoding.

Pixel coordinates are (x, y) = (column, row) at pixel centres. Part p owns
POF channels ``3p:3p+3``.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import container, kernels

IMAGE_SIZE = (368, 368)
SIGMA_S = 7.0
HALF_WIDTH = 10.0
PRESENCE_THRESHOLD = 0.1
ORIENTATION_MIN_NORM = 0.1


@dataclass(frozen=True, eq=False)
class FieldStack:
    """Confidence maps (J, h, w) and POFs (3P, h, w), float32."""

    confidence: np.ndarray
    pof: np.ndarray

    def __post_init__(self):
        if self.confidence.shape[1:] != self.pof.shape[1:] or self.pof.shape[0] % 3:
            raise ValueError("confidence and POF tensors disagree in shape")

    @property
    def size(self):
        return self.confidence.shape[1:]

    @property
    def n_joints(self):
        return self.confidence.shape[0]

    @property
    def n_parts(self):
        return self.pof.shape[0] // 3

    def save(self, prefix):
        container.save(f"{prefix}_conf.poft", self.confidence.astype(np.float32))
        container.save(f"{prefix}_pof.poft", self.pof.astype(np.float32))

    @classmethod
    def load(cls, prefix):
        conf = container.load(f"{prefix}_conf.poft")
        pof = container.load(f"{prefix}_pof.poft")
        if conf.ndim != 3 or pof.ndim != 3:
            raise container.ContainerError("bad container: field tensors must be 3-D")
        return cls(conf, pof)

    @staticmethod
    def exists(prefix):
        return os.path.exists(f"{prefix}_conf.poft")


@dataclass(frozen=True, eq=False)
class Points2D:
    """Auxiliary 2-D detections (toes, face): positions px and presence."""

    xy: np.ndarray
    present: np.ndarray
    confidence: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "xy", np.asarray(self.xy, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "present", np.asarray(self.present, dtype=bool))
        if self.confidence is None:
            object.__setattr__(self, "confidence", np.ones(len(self.xy)))

    def to_array(self):
        return np.column_stack([self.xy, self.confidence, self.present.astype(float)])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(-1, 4)
        return cls(a[:, :2], a[:, 3] > 0.5, a[:, 2])


@dataclass(frozen=True, eq=False)
class Observation:
    """Decoded detections of one network: keypoints and part orientations.

    A body observation may also carry toe and face detections and the two
    hand observations (in hand-network indexing).
    """

    keypoints: np.ndarray
    confidence: np.ndarray
    present: np.ndarray
    orientations: np.ndarray
    orient_present: np.ndarray
    toes: Points2D = None
    face: Points2D = None
    lhand: "Observation" = None
    rhand: "Observation" = None

    def __post_init__(self):
        s = object.__setattr__
        s(self, "keypoints", np.asarray(self.keypoints, dtype=float).reshape(-1, 2))
        s(self, "confidence", np.asarray(self.confidence, dtype=float).reshape(-1))
        s(self, "present", np.asarray(self.present, dtype=bool).reshape(-1))
        s(self, "orientations", np.asarray(self.orientations, dtype=float).reshape(-1, 3))
        s(self, "orient_present", np.asarray(self.orient_present, dtype=bool).reshape(-1))

    @classmethod
    def empty(cls, n_joints, n_parts):
        return cls(np.zeros((n_joints, 2)), np.zeros(n_joints), np.zeros(n_joints, bool),
                   np.zeros((n_parts, 3)), np.zeros(n_parts, bool))

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in ("keypoints", "confidence", "present", "orientations",
                                           "orient_present", "toes", "face", "lhand", "rhand")}
        d.update(kw)
        return Observation(**d)

    def is_empty(self):
        parts = [self.present.any(), self.orient_present.any()]
        for aux in (self.toes, self.face):
            if aux is not None:
                parts.append(aux.present.any())
        for hand in (self.lhand, self.rhand):
            if hand is not None:
                parts.append(not hand.is_empty())
        return not any(parts)


def render_confidence(joints2d, size=IMAGE_SIZE, sigma_s=SIGMA_S, present=None):
    """Gaussian confidence maps exp(-|x - j|^2 / (2 sigma_s^2)); absent joints are zero."""
    joints2d = np.asarray(joints2d, dtype=float).reshape(-1, 2)
    h, w = size
    present = np.ones(len(joints2d), bool) if present is None else np.asarray(present, bool)
    out = np.zeros((len(joints2d), h, w), dtype=np.float32)
    xs = np.arange(w, dtype=float)
    ys = np.arange(h, dtype=float)
    for k in np.flatnonzero(present):
        gx = np.exp(-(xs - joints2d[k, 0]) ** 2 / (2.0 * sigma_s**2))
        gy = np.exp(-(ys - joints2d[k, 1]) ** 2 / (2.0 * sigma_s**2))
        out[k] = np.outer(gy, gx)
    return out


def render_segments(n_channels, channels, starts, ends, values, size=IMAGE_SIZE,
                    half_width=HALF_WIDTH):
    """Rasterize oriented rectangles into 3-vector channels.

    Several segments may write the same channel; where they overlap the
    contributions are averaged and the average is renormalized to unit length.
    """
    h, w = size
    sums = np.zeros((n_channels, 3, h, w))
    counts = np.zeros((n_channels, h, w), dtype=np.int32)
    if len(channels):
        kernels.rasterize_segments(sums, counts, np.asarray(channels, dtype=np.int32),
                                   np.asarray(starts, dtype=float).reshape(-1, 2),
                                   np.asarray(ends, dtype=float).reshape(-1, 2),
                                   np.asarray(values, dtype=float).reshape(-1, 3), float(half_width))
    norms = np.linalg.norm(sums, axis=1)
    hit = norms > 0
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=hit)
    unit = sums * scale[:, None]
    return unit.reshape(n_channels * 3, h, w).astype(np.float32)


def render_pof(joints2d, orientations, parts, size=IMAGE_SIZE, half_width=HALF_WIDTH,
               present=None, orient_present=None):
    """Part orientation fields for a skeleton's parts.

    Returns (pof (3P, h, w) float32, degenerate flags (P,)). A part is drawn
    only when both endpoints are present; coincident endpoints leave its
    channels zero and set its flag.
    """
    joints2d = np.asarray(joints2d, dtype=float).reshape(-1, 2)
    orientations = np.asarray(orientations, dtype=float).reshape(-1, 3)
    n_parts = len(parts)
    present = np.ones(len(joints2d), bool) if present is None else np.asarray(present, bool)
    op = np.ones(n_parts, bool) if orient_present is None else np.asarray(orient_present, bool)
    degenerate = np.zeros(n_parts, bool)
    chans, a, b, vals = [], [], [], []
    for p, (m, n) in enumerate(parts):
        if not (present[m] and present[n] and op[p]):
            continue
        if np.hypot(*(joints2d[n] - joints2d[m])) < 1e-9:
            degenerate[p] = True
            continue
        chans.append(p)
        a.append(joints2d[m])
        b.append(joints2d[n])
        vals.append(orientations[p])
    pof = render_segments(n_parts, chans, a, b, vals, size, half_width)
    return pof, degenerate


def render_fields(joints2d, orientations, parts, size=IMAGE_SIZE, sigma_s=SIGMA_S,
                  half_width=HALF_WIDTH, present=None, orient_present=None):
    conf = render_confidence(joints2d, size, sigma_s, present)
    pof, degenerate = render_pof(joints2d, orientations, parts, size, half_width, present,
                                 orient_present)
    return FieldStack(conf, pof), degenerate


def decode_keypoints(confidence, threshold=PRESENCE_THRESHOLD):
    """Per-channel argmax (first maximum in row-major order).

    Returns (keypoints (J, 2) as (x, y), confidence (J,), present (J,)).
    """
    conf = np.asarray(confidence)
    n, h, w = conf.shape
    flat = conf.reshape(n, -1)
    idx = np.argmax(flat, axis=1)
    peak = flat[np.arange(n), idx].astype(float)
    kps = np.column_stack([idx % w, idx // w]).astype(float)
    return kps, peak, peak >= threshold


def bilinear(field, points):
    """Sample a (C, h, w) field at (x, y) points with zero padding; returns (N, C)."""
    c, h, w = field.shape
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x0 = np.floor(pts[:, 0]).astype(int)
    y0 = np.floor(pts[:, 1]).astype(int)
    fx = pts[:, 0] - x0
    fy = pts[:, 1] - y0
    out = np.zeros((len(pts), c))
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (wgt > 0)
        out[ok] += wgt[ok, None] * field[:, yi[ok], xi[ok]].T
    return out


def decode_orientations(pof, keypoints, present, parts, min_norm=ORIENTATION_MIN_NORM):
    """Average each part's field along the segment between its decoded endpoints.

    Uses ceil(length) + 1 uniformly spaced bilinear samples; the mean is
    renormalized and the part counts as present when the mean's norm is at
    least ``min_norm``.
    """
    keypoints = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    present = np.asarray(present, bool)
    n_parts = len(parts)
    out = np.zeros((n_parts, 3))
    ok = np.zeros(n_parts, bool)
    for p, (m, n) in enumerate(parts):
        if not (present[m] and present[n]):
            continue
        a, b = keypoints[m], keypoints[n]
        count = math.ceil(float(np.hypot(*(b - a)))) + 1
        s = np.linspace(0.0, 1.0, count)[:, None]
        samples = bilinear(pof[3 * p:3 * p + 3], a + s * (b - a))
        mean = samples.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm >= min_norm:
            out[p] = mean / norm
            ok[p] = True
    return out, ok


def decode(fields, parts, threshold=PRESENCE_THRESHOLD):
    """Keypoints then orientations, packed as an Observation."""
    kps, conf, present = decode_keypoints(fields.confidence, threshold)
    orient, op = decode_orientations(fields.pof, kps, present, parts)
    return Observation(kps, conf, present, orient, op)


def flip_fields(fields):
    """Mirror fields left-right; the x component of every orientation changes sign."""
    conf = fields.confidence[:, :, ::-1]
    pof = fields.pof[:, :, ::-1].copy()
    pof[0::3] *= -1.0
    return FieldStack(np.ascontiguousarray(conf), np.ascontiguousarray(pof))


def unflip_observation(obs, width):
    """Map an observation decoded from flipped fields back to the original image."""
    kps = obs.keypoints.copy()
    kps[:, 0] = (width - 1) - kps[:, 0]
    orient = obs.orientations.copy()
    orient[:, 0] *= -1.0
    return obs.replace(keypoints=kps, orientations=orient)
