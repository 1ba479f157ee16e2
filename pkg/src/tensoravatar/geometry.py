"""Triangle frames, splat local/global transforms, quaternions and the pinhole camera.

Quaternions are stored as ``(w, x, y, z)``. Everything here broadcasts over
leading batch dimensions, so a single triangle and an ``(F, 3)`` face table go
through the same code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTriangle

AREA_EPS = 1e-12


@dataclass(frozen=True)
class TriangleFrame:
    """Local coordinate frame of one (or a batch of) mesh triangles.

    ``R`` has columns ``[edge direction | normal | edge x normal]``, ``T`` is the
    vertex mean and ``k`` the isotropic scale.
    """

    R: np.ndarray
    T: np.ndarray
    k: np.ndarray

    def __len__(self) -> int:
        return 1 if self.T.ndim == 1 else self.T.shape[0]

    def __getitem__(self, idx) -> "TriangleFrame":
        return TriangleFrame(self.R[idx], self.T[idx], self.k[idx])


def triangle_frame(v0, v1, v2) -> TriangleFrame:
    """Build the local frame of triangle(s) ``(v0, v1, v2)``.

    Raises
    ------
    DegenerateTriangle
        If any triangle has area <= 1e-12.
    """
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    e1 = v1 - v0
    e2 = v2 - v0
    c = np.cross(e1, e2)
    cn = np.linalg.norm(c, axis=-1)
    area = 0.5 * cn
    if np.any(~(area > AREA_EPS)):
        bad = np.flatnonzero(np.atleast_1d(~(area > AREA_EPS)))
        raise DegenerateTriangle(f"{bad.size} triangle(s) with area <= {AREA_EPS:g}, first index {bad[0]}")
    el = np.linalg.norm(e1, axis=-1)
    a = e1 / el[..., None]
    n = c / cn[..., None]
    b = np.cross(a, n)
    R = np.stack([a, n, b], axis=-1)
    T = (v0 + v1 + v2) / 3.0
    height = cn / el
    k = 0.5 * (el + height)
    return TriangleFrame(R, T, k)


def mesh_frames(vertices: np.ndarray, faces: np.ndarray) -> TriangleFrame:
    """Frames for every face of a triangle mesh."""
    v = vertices[faces]
    return triangle_frame(v[:, 0], v[:, 1], v[:, 2])


def local_to_global(mu_local, rot_local, scale_local, frame: TriangleFrame):
    """Map a splat from triangle-local to global space.

    ``r = R r'``, ``mu = k R mu' + T``, ``s = k s'``.
    """
    R, T, k = frame.R, frame.T, np.asarray(frame.k)
    mu = k[..., None] * np.einsum("...ij,...j->...i", R, mu_local) + T
    rot = np.einsum("...ij,...jk->...ik", R, rot_local)
    scale = k[..., None] * np.asarray(scale_local)
    return mu, rot, scale


def global_to_local(mu, rot, scale, frame: TriangleFrame):
    """Exact inverse of :func:`local_to_global`."""
    R, T, k = frame.R, frame.T, np.asarray(frame.k)
    Rt = np.swapaxes(R, -1, -2)
    mu_local = np.einsum("...ij,...j->...i", Rt, np.asarray(mu) - T) / k[..., None]
    rot_local = np.einsum("...ij,...jk->...ik", Rt, rot)
    scale_local = np.asarray(scale) / k[..., None]
    return mu_local, rot_local, scale_local


def canonicalize_view(v_d, R_c, R_d):
    """Rotate a deformed-space view direction into canonical space: ``R_c R_d^T v_d``."""
    tmp = np.einsum("...ji,...j->...i", R_d, v_d)
    return np.einsum("...ij,...j->...i", R_c, tmp)


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_distance(qa, qb):
    """``1 - |<qa, qb>|`` for unit quaternions; symmetric and sign-invariant."""
    d = np.abs(np.sum(np.asarray(qa) * np.asarray(qb), axis=-1))
    return 1.0 - np.minimum(d, 1.0)


def quat_to_rotmat(q):
    """Rotation matrix of unit quaternion(s) ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_to_rotmat_backward(q, dR):
    """Gradient of ``quat_to_rotmat(normalize(q))`` with respect to raw ``q``."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    g = dR
    dw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1]
              - w * g[..., 1, 2] + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    dy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0]
              + z * g[..., 1, 2] - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    dz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0]
              - 2 * z * g[..., 1, 1] + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=-1)
    return (dqn - qn * np.sum(qn * dqn, axis=-1, keepdims=True)) / norm


def quat_multiply(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def axis_angle_to_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)
    return np.concatenate([np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1)


def rotmat_to_quat(R):
    """Unit quaternion with non-negative ``w`` for a single rotation matrix."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class Camera:
    """Pinhole camera, OpenCV convention (x right, y down, z forward).

    ``R``/``t`` map world to camera coordinates: ``x_cam = R x + t``. Pixel
    ``(i, j)`` covers ``[j, j+1) x [i, i+1)`` in image coordinates.
    """

    R: np.ndarray
    t: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("camera width/height must be >= 1")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @classmethod
    def look_at(cls, eye, target, up, width: int, height: int, focal: float) -> "Camera":
        eye = np.asarray(eye, dtype=float)
        fwd = np.asarray(target, dtype=float) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=float))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd], axis=0)
        return cls(R, -R @ eye, float(focal), float(focal), width / 2.0, height / 2.0, int(width), int(height))

    def scaled_focal(self, factor: float) -> "Camera":
        return Camera(self.R, self.t, self.fx * factor, self.fy * factor, self.cx, self.cy, self.width, self.height)
