"""Tensorial feature stores: the appearance triplane and 1D feature lines.

Positions are mapped into the unit cube through a bounding box and clamped to
``[0, 1]``. Grid nodes sit at ``i / (n - 1)`` (corner aligned), so sampling at
a node returns the stored features exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

PLANE_AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass
class Triplane:
    xy: np.ndarray  # (n_f, n_f, c_xy), indexed [x, y]
    xz: np.ndarray  # (n_f, n_f, c_side), indexed [x, z]
    yz: np.ndarray  # (n_f, n_f, c_side), indexed [y, z]
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float)
        n = self.xy.shape[0]
        for name in PLANE_AXES:
            g = getattr(self, name)
            if g.ndim != 3 or g.shape[0] != n or g.shape[1] != n or g.shape[2] < 1:
                raise ValueError(f"plane {name} has shape {g.shape}, expected ({n}, {n}, C)")
        if n < 2:
            raise ValueError("triplane resolution must be >= 2")
        if np.any(self.bbox_min >= self.bbox_max):
            raise ValueError("triplane bbox must satisfy min < max on every axis")

    @property
    def resolution(self) -> int:
        return self.xy.shape[0]

    @property
    def n_features(self) -> int:
        return self.xy.shape[2] + self.xz.shape[2] + self.yz.shape[2]

    @classmethod
    def random(cls, n_f, c_xy, c_side, bbox_min, bbox_max, rng, scale=1e-4, dtype=np.float64):
        def grid(c):
            return rng.uniform(-scale, scale, size=(n_f, n_f, c)).astype(dtype)

        return cls(grid(c_xy), grid(c_side), grid(c_side), bbox_min, bbox_max)


@dataclass
class FeatureLineTriple:
    """Three 1D feature grids ``lines[a]`` of shape ``(n_s, n_d2)``, one per axis."""

    lines: np.ndarray  # (3, n_s, n_d2)
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float)
        if self.lines.ndim != 3 or self.lines.shape[0] != 3 or self.lines.shape[1] < 2:
            raise ValueError(f"feature line triple must be (3, n_s>=2, n_d2), got {self.lines.shape}")

    @property
    def L_x(self):
        return self.lines[0]

    @property
    def L_y(self):
        return self.lines[1]

    @property
    def L_z(self):
        return self.lines[2]

    @property
    def n_features(self) -> int:
        return 3 * self.lines.shape[2]


def normalize_points(p, bbox_min, bbox_max):
    """Map positions into ``[0, 1]^3``; returns (clamped coords, inside mask, d coord / d p)."""
    p = np.atleast_2d(np.asarray(p))
    ext = bbox_max - bbox_min
    u = (p - bbox_min) / ext
    inside = (u >= 0.0) & (u <= 1.0)
    return np.clip(u, 0.0, 1.0), inside, 1.0 / ext


def _stencil(u, n):
    """Lower node index and fractional offset for corner-aligned grids of ``n`` nodes."""
    g = u * (n - 1)
    i0 = np.minimum(np.floor(g).astype(np.int64), n - 2)
    return i0, g - i0


# ---------------------------------------------------------------------------
# triplane


def _plane_sample(grid, ua, ub):
    n = grid.shape[0]
    i0, fa = _stencil(ua, n)
    j0, fb = _stencil(ub, n)
    fa = fa[:, None]
    fb = fb[:, None]
    out = (1 - fa) * (1 - fb) * grid[i0, j0]
    out = out + fa * (1 - fb) * grid[i0 + 1, j0]
    out = out + (1 - fa) * fb * grid[i0, j0 + 1]
    out = out + fa * fb * grid[i0 + 1, j0 + 1]
    return out


def triplane_sample(tp: Triplane, p) -> np.ndarray:
    """Bilinear features at canonical position(s) ``p``, concatenated as (xy, xz, yz).

    Returns shape ``(N, n_features)`` for ``p`` of shape ``(N, 3)`` and a 1D
    vector for a single point.
    """
    single = np.ndim(p) == 1
    u, _, _ = normalize_points(p, tp.bbox_min, tp.bbox_max)
    out = np.concatenate(
        [_plane_sample(getattr(tp, name), u[:, a], u[:, b]) for name, (a, b) in PLANE_AXES.items()],
        axis=1,
    )
    return out[0] if single else out


@njit(cache=True)
def _scatter_rows(out, idx, weights, grad):
    # out[idx[i]] += weights[i] * grad[i], in index order (deterministic)
    for i in range(idx.shape[0]):
        r = idx[i]
        w = weights[i]
        for c in range(grad.shape[1]):
            out[r, c] += w * grad[i, c]


def _scatter_add(out, idx, weights, grad):
    grad = np.ascontiguousarray(grad, dtype=out.dtype)
    _scatter_rows(out, np.ascontiguousarray(idx, dtype=np.int64),
                  np.ascontiguousarray(weights, dtype=out.dtype), grad)


def _scatter_grad(shape, idx_a, idx_b, weights, grad):
    n = shape[0]
    flat = np.zeros((n * n, shape[2]), dtype=grad.dtype)
    _scatter_add(flat, idx_a * n + idx_b, weights, grad)
    return flat.reshape(shape)


def triplane_sample_backward(tp: Triplane, p, grad):
    """Gradients of ``sum(grad * triplane_sample(tp, p))``.

    Returns ``({"xy": ..., "xz": ..., "yz": ...}, dp)``. Positions outside the
    bbox are clamped, so their ``dp`` along the clamped axis is zero.
    """
    single = np.ndim(p) == 1
    grad = np.atleast_2d(grad)
    u, inside, du_dp = normalize_points(p, tp.bbox_min, tp.bbox_max)
    dp = np.zeros(u.shape, dtype=np.result_type(grad, u))
    grids = {}
    col = 0
    for name, (a, b) in PLANE_AXES.items():
        grid = getattr(tp, name)
        n, _, c = grid.shape
        g = grad[:, col:col + c]
        col += c
        i0, fa = _stencil(u[:, a], n)
        j0, fb = _stencil(u[:, b], n)
        ia = np.concatenate([i0, i0 + 1, i0, i0 + 1])
        jb = np.concatenate([j0, j0, j0 + 1, j0 + 1])
        w = np.concatenate([(1 - fa) * (1 - fb), fa * (1 - fb), (1 - fa) * fb, fa * fb])
        grids[name] = _scatter_grad(grid.shape, ia, jb, w, np.tile(g, (4, 1)))
        g00 = np.sum(g * grid[i0, j0], axis=1)
        g10 = np.sum(g * grid[i0 + 1, j0], axis=1)
        g01 = np.sum(g * grid[i0, j0 + 1], axis=1)
        g11 = np.sum(g * grid[i0 + 1, j0 + 1], axis=1)
        d_fa = (1 - fb) * (g10 - g00) + fb * (g11 - g01)
        d_fb = (1 - fa) * (g01 - g00) + fa * (g11 - g10)
        dp[:, a] += d_fa * (n - 1) * du_dp[a] * inside[:, a]
        dp[:, b] += d_fb * (n - 1) * du_dp[b] * inside[:, b]
    return grids, (dp[0] if single else dp)


# ---------------------------------------------------------------------------
# feature lines


def line_sample_array(lines, bbox_min, bbox_max, p) -> np.ndarray:
    """Linear samples of a ``(3, n_s, n_d2)`` line stack at ``p``, concatenated (x, y, z)."""
    u, _, _ = normalize_points(p, bbox_min, bbox_max)
    n = lines.shape[1]
    parts = []
    for a in range(3):
        i0, f = _stencil(u[:, a], n)
        f = f[:, None]
        parts.append((1 - f) * lines[a, i0] + f * lines[a, i0 + 1])
    return np.concatenate(parts, axis=1)


def line_sample_array_backward(lines, bbox_min, bbox_max, p, grad):
    """Returns ``(d lines, dp)`` for :func:`line_sample_array`."""
    grad = np.atleast_2d(grad)
    u, inside, du_dp = normalize_points(p, bbox_min, bbox_max)
    _, n, c = lines.shape
    dlines = np.zeros(lines.shape, dtype=np.result_type(grad, lines))
    dp = np.zeros(u.shape, dtype=np.result_type(grad, u))
    for a in range(3):
        g = grad[:, a * c:(a + 1) * c]
        i0, f = _stencil(u[:, a], n)
        _scatter_add(dlines[a], np.concatenate([i0, i0 + 1]), np.concatenate([1 - f, f]), np.tile(g, (2, 1)))
        slope = np.sum(g * (lines[a, i0 + 1] - lines[a, i0]), axis=1)
        dp[:, a] = slope * (n - 1) * du_dp[a] * inside[:, a]
    return dlines, dp


def line_sample(lt: FeatureLineTriple, p) -> np.ndarray:
    single = np.ndim(p) == 1
    out = line_sample_array(lt.lines, lt.bbox_min, lt.bbox_max, p)
    return out[0] if single else out


def line_sample_backward(lt: FeatureLineTriple, p, grad):
    single = np.ndim(p) == 1
    dlines, dp = line_sample_array_backward(lt.lines, lt.bbox_min, lt.bbox_max, p, grad)
    return dlines, (dp[0] if single else dp)
