"""CPU splat rasterizer with an exact reverse pass.

Splats are projected with the usual EWA linearization, globally depth sorted
(ties by splat index) and composited front to back per pixel. Per-pixel
contributor lists are kept so the backward pass can replay the recurrence
without dividing by ``1 - w``.

Pixel ``(i, j)`` has its centre at image coordinates ``(j + 0.5, i + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

NEAR = 0.01
COV_DILATION = 0.3  # px^2
MIN_WEIGHT = 1.0 / 255.0
T_EPS = 1e-4
MAHA_CUTOFF = 9.0  # 3 sigma ellipse


@dataclass
class ProjectedGaussians:
    """Struct-of-arrays view of the visible 2D Gaussians."""

    means: np.ndarray  # (M, 2) px
    cov: np.ndarray  # (M, 2, 2) px^2
    depth: np.ndarray  # (M,)
    rgb: np.ndarray  # (M, 3)
    alpha: np.ndarray  # (M,)
    index: np.ndarray  # (M,) ids into the splat arrays that were projected
    n_total: int = 0
    cache: dict | None = None

    def __len__(self) -> int:
        return len(self.index)


def project(attrs, cam, keep_cache: bool = True) -> ProjectedGaussians:
    """Project splats ``attrs`` (needs ``mu, rot, scale, rgb, alpha``) through ``cam``.

    Splats with camera depth ``<= 0.01`` are dropped; 2D covariances get
    ``+0.3 I`` px^2.
    """
    mu = np.asarray(attrs.mu, dtype=float)
    x = mu @ cam.R.T + cam.t
    idx = np.flatnonzero(x[:, 2] > NEAR)
    xc = x[idx]
    z = xc[:, 2]
    means = np.stack([cam.fx * xc[:, 0] / z + cam.cx, cam.fy * xc[:, 1] / z + cam.cy], axis=1)
    M = np.asarray(attrs.rot, dtype=float)[idx] * np.asarray(attrs.scale, dtype=float)[idx][:, None, :]
    sigma = M @ np.swapaxes(M, 1, 2)
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * xc[:, 0] / z ** 2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * xc[:, 1] / z ** 2
    Tm = J @ cam.R
    cov = Tm @ sigma @ np.swapaxes(Tm, 1, 2) + COV_DILATION * np.eye(2)
    rgb = np.asarray(attrs.rgb, dtype=float)[idx] if getattr(attrs, "rgb", None) is not None else np.zeros((len(idx), 3))
    alpha = np.asarray(attrs.alpha, dtype=float)[idx]
    cache = dict(xc=xc, M=M, sigma=sigma, Tm=Tm, rot=np.asarray(attrs.rot, dtype=float)[idx],
                 scale=np.asarray(attrs.scale, dtype=float)[idx], cam=cam) if keep_cache else None
    return ProjectedGaussians(means, cov, z.copy(), rgb, alpha, idx, n_total=len(mu), cache=cache)


def project_backward(proj: ProjectedGaussians, dmeans, dcov):
    """Map 2D mean/covariance gradients back to ``(d mu, d rot, d scale)`` over all splats."""
    c = proj.cache
    cam = c["cam"]
    xc, M, sigma, Tm = c["xc"], c["M"], c["sigma"], c["Tm"]
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    dxc = np.zeros_like(xc)
    dxc[:, 0] = dmeans[:, 0] * cam.fx / z
    dxc[:, 1] = dmeans[:, 1] * cam.fy / z
    dxc[:, 2] = -dmeans[:, 0] * cam.fx * x / z ** 2 - dmeans[:, 1] * cam.fy * y / z ** 2
    gs = dcov + np.swapaxes(dcov, 1, 2)
    dsigma = np.swapaxes(Tm, 1, 2) @ dcov @ Tm
    dTm = gs @ Tm @ sigma
    dJ = dTm @ cam.R.T
    dxc[:, 0] += -cam.fx / z ** 2 * dJ[:, 0, 2]
    dxc[:, 1] += -cam.fy / z ** 2 * dJ[:, 1, 2]
    dxc[:, 2] += (-cam.fx / z ** 2 * dJ[:, 0, 0] + 2 * cam.fx * x / z ** 3 * dJ[:, 0, 2]
                  - cam.fy / z ** 2 * dJ[:, 1, 1] + 2 * cam.fy * y / z ** 3 * dJ[:, 1, 2])
    dM = (dsigma + np.swapaxes(dsigma, 1, 2)) @ M
    n = proj.n_total
    dmu = np.zeros((n, 3))
    drot = np.zeros((n, 3, 3))
    dscale = np.zeros((n, 3))
    dmu[proj.index] = dxc @ cam.R
    drot[proj.index] = dM * c["scale"][:, None, :]
    dscale[proj.index] = np.sum(dM * c["rot"], axis=1)
    return dmu, drot, dscale


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _bin_count(order, xmin, xmax, ymin, ymax, width, counts):
    for s in order:
        for py in range(ymin[s], ymax[s] + 1):
            for px in range(xmin[s], xmax[s] + 1):
                counts[py * width + px] += 1


@njit(cache=True)
def _bin_fill(order, xmin, xmax, ymin, ymax, width, offsets, lists):
    cursor = offsets[:-1].copy()
    for s in order:
        for py in range(ymin[s], ymax[s] + 1):
            for px in range(xmin[s], xmax[s] + 1):
                p = py * width + px
                lists[cursor[p]] = s
                cursor[p] += 1


def _weights_impl(offsets, lists, mx, my, ca, cb, cc, alpha, width, n_pix,
                  acc_ids, c_w, c_t, c_g, n_acc, t_final):
    for p in prange(n_pix):
        fx = (p % width) + 0.5
        fy = (p // width) + 0.5
        T = 1.0
        k = offsets[p]
        for e in range(offsets[p], offsets[p + 1]):
            s = lists[e]
            dx = fx - mx[s]
            dy = fy - my[s]
            maha = ca[s] * dx * dx + 2.0 * cb[s] * dx * dy + cc[s] * dy * dy
            if maha > MAHA_CUTOFF:
                continue
            G = np.exp(-0.5 * maha)
            w = alpha[s] * G
            if w < MIN_WEIGHT:
                continue
            acc_ids[k] = s
            c_w[k] = w
            c_t[k] = T
            c_g[k] = G
            k += 1
            T *= 1.0 - w
            if T < T_EPS:
                break
        n_acc[p] = k - offsets[p]
        t_final[p] = T


def _composite_impl(offsets, n_acc, acc_ids, c_w, c_t, t_final, rgb, bg, n_pix, out):
    for p in prange(n_pix):
        r = 0.0
        g = 0.0
        b = 0.0
        for e in range(offsets[p], offsets[p] + n_acc[p]):
            s = acc_ids[e]
            wt = c_w[e] * c_t[e]
            r += rgb[s, 0] * wt
            g += rgb[s, 1] * wt
            b += rgb[s, 2] * wt
        out[p, 0] = r + t_final[p] * bg[0]
        out[p, 1] = g + t_final[p] * bg[1]
        out[p, 2] = b + t_final[p] * bg[2]


def _backward_impl(offsets, n_acc, acc_ids, c_w, c_t, c_g, rgb, alpha, mx, my, ca, cb, cc, bg,
                   dimg, width, n_pix, out):
    for p in prange(n_pix):
        n = n_acc[p]
        if n == 0:
            continue
        fx = (p % width) + 0.5
        fy = (p // width) + 0.5
        g0 = dimg[p, 0]
        g1 = dimg[p, 1]
        g2 = dimg[p, 2]
        r0 = bg[0]
        r1 = bg[1]
        r2 = bg[2]
        start = offsets[p]
        for e in range(start + n - 1, start - 1, -1):
            s = acc_ids[e]
            w = c_w[e]
            T = c_t[e]
            G = c_g[e]
            wt = w * T
            out[e, 0] = wt * g0
            out[e, 1] = wt * g1
            out[e, 2] = wt * g2
            dw = T * ((rgb[s, 0] - r0) * g0 + (rgb[s, 1] - r1) * g1 + (rgb[s, 2] - r2) * g2)
            out[e, 3] = dw * G
            dmaha = -0.5 * dw * alpha[s] * G
            dx = fx - mx[s]
            dy = fy - my[s]
            out[e, 4] = -dmaha * 2.0 * (ca[s] * dx + cb[s] * dy)
            out[e, 5] = -dmaha * 2.0 * (cb[s] * dx + cc[s] * dy)
            out[e, 6] = dmaha * dx * dx
            out[e, 7] = dmaha * 2.0 * dx * dy
            out[e, 8] = dmaha * dy * dy
            r0 = rgb[s, 0] * w + (1.0 - w) * r0
            r1 = rgb[s, 1] * w + (1.0 - w) * r1
            r2 = rgb[s, 2] * w + (1.0 - w) * r2


_KERNELS = {
    False: (njit(cache=True)(_weights_impl), njit(cache=True)(_composite_impl), njit(cache=True)(_backward_impl)),
    True: (njit(cache=True, parallel=True)(_weights_impl), njit(cache=True, parallel=True)(_composite_impl),
           njit(cache=True, parallel=True)(_backward_impl)),
}


# ---------------------------------------------------------------------------
# blending


@njit(cache=True)
def _reduce_rows(ids, vals, out):
    # serial per-splat sum of per-contribution gradients (fixed order)
    for e in range(ids.shape[0]):
        r = ids[e]
        for j in range(vals.shape[1]):
            out[r, j] += vals[e, j]


@dataclass
class BlendState:
    """Per-pixel contributor lists of one rasterization, reusable for backward."""

    proj: ProjectedGaussians
    width: int
    height: int
    conic: np.ndarray
    offsets: np.ndarray
    acc_ids: np.ndarray
    c_w: np.ndarray
    c_t: np.ndarray
    c_g: np.ndarray
    n_acc: np.ndarray
    t_final: np.ndarray
    parallel: bool = False
    rgb: np.ndarray | None = None
    background: np.ndarray | None = None

    def contributing(self) -> np.ndarray:
        """Boolean mask over projected splats that reach at least one pixel."""
        mask = np.zeros(len(self.proj) + 1, dtype=bool)
        mask[self.acc_ids] = True
        return mask[:-1]

    @property
    def n_contributions(self) -> int:
        return int(self.n_acc.sum())


def _conic_and_radius(cov):
    A = cov[:, 0, 0]
    B = 0.5 * (cov[:, 0, 1] + cov[:, 1, 0])
    C = cov[:, 1, 1]
    det = A * C - B * B
    conic = np.stack([C / det, -B / det, A / det], axis=1)
    mid = 0.5 * (A + C)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    return conic, np.ceil(3.0 * np.sqrt(lam))


def blend_weights(proj: ProjectedGaussians, width: int, height: int, parallel: bool = False) -> BlendState:
    """Sort, bin and compute every per-pixel compositing weight (colours not needed)."""
    m = len(proj)
    n_pix = width * height
    conic, radius = _conic_and_radius(proj.cov) if m else (np.zeros((0, 3)), np.zeros(0))
    mx = np.ascontiguousarray(proj.means[:, 0]) if m else np.zeros(0)
    my = np.ascontiguousarray(proj.means[:, 1]) if m else np.zeros(0)
    xmin = np.maximum(np.floor(mx - radius - 0.5), 0).astype(np.int64)
    xmax = np.minimum(np.ceil(mx + radius - 0.5), width - 1).astype(np.int64)
    ymin = np.maximum(np.floor(my - radius - 0.5), 0).astype(np.int64)
    ymax = np.minimum(np.ceil(my + radius - 0.5), height - 1).astype(np.int64)
    order = np.lexsort((proj.index, proj.depth)).astype(np.int64)
    order = order[(xmin[order] <= xmax[order]) & (ymin[order] <= ymax[order])]
    counts = np.zeros(n_pix, dtype=np.int64)
    _bin_count(order, xmin, xmax, ymin, ymax, width, counts)
    offsets = np.zeros(n_pix + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    lists = np.empty(offsets[-1], dtype=np.int64)
    _bin_fill(order, xmin, xmax, ymin, ymax, width, offsets, lists)
    e = offsets[-1]
    acc_ids = np.full(e, m, dtype=np.int64)
    c_w = np.zeros(e)
    c_t = np.zeros(e)
    c_g = np.zeros(e)
    n_acc = np.zeros(n_pix, dtype=np.int64)
    t_final = np.ones(n_pix)
    weights_k = _KERNELS[parallel][0]
    weights_k(offsets, lists, mx, my, np.ascontiguousarray(conic[:, 0]), np.ascontiguousarray(conic[:, 1]),
              np.ascontiguousarray(conic[:, 2]), np.ascontiguousarray(proj.alpha, dtype=float), width, n_pix,
              acc_ids, c_w, c_t, c_g, n_acc, t_final)
    return BlendState(proj, width, height, conic, offsets, acc_ids, c_w, c_t, c_g, n_acc, t_final, parallel)


def blend_composite(state: BlendState, rgb, background) -> np.ndarray:
    """Colour pass over precomputed weights; ``rgb`` is indexed like ``state.proj``."""
    rgb = np.ascontiguousarray(rgb, dtype=float).reshape(-1, 3)
    bg = np.ascontiguousarray(np.broadcast_to(np.asarray(background, dtype=float), (3,)))
    state.rgb = rgb
    state.background = bg
    out = np.empty((state.width * state.height, 3))
    _KERNELS[state.parallel][1](state.offsets, state.n_acc, state.acc_ids, state.c_w, state.c_t,
                                state.t_final, rgb if len(rgb) else np.zeros((1, 3)), bg,
                                state.width * state.height, out)
    return out.reshape(state.height, state.width, 3)


def blend(proj: ProjectedGaussians, width: int, height: int, background=(0.0, 0.0, 0.0),
          return_state: bool = False, parallel: bool = False):
    """Front-to-back alpha compositing of projected splats into an ``(H, W, 3)`` image."""
    state = blend_weights(proj, width, height, parallel)
    img = blend_composite(state, proj.rgb, background)
    return (img, state) if return_state else img


def blend_backward(state: BlendState, dimage):
    """Gradients w.r.t. ``(means, cov, rgb, alpha)`` of the projected splats.

    ``cov`` gradients are symmetric: the off-diagonal entries each carry half
    of the derivative w.r.t. the shared off-diagonal value.
    """
    m = len(state.proj)
    n_pix = state.width * state.height
    dimg = np.ascontiguousarray(np.asarray(dimage, dtype=float).reshape(n_pix, 3))
    out = np.zeros((len(state.acc_ids), 9))
    rgb = state.rgb if len(state.rgb) else np.zeros((1, 3))
    conic = state.conic
    _KERNELS[state.parallel][2](state.offsets, state.n_acc, state.acc_ids, state.c_w, state.c_t, state.c_g,
                                rgb, np.ascontiguousarray(state.proj.alpha, dtype=float),
                                np.ascontiguousarray(state.proj.means[:, 0]) if m else np.zeros(1),
                                np.ascontiguousarray(state.proj.means[:, 1]) if m else np.zeros(1),
                                np.ascontiguousarray(conic[:, 0]) if m else np.zeros(1),
                                np.ascontiguousarray(conic[:, 1]) if m else np.zeros(1),
                                np.ascontiguousarray(conic[:, 2]) if m else np.zeros(1),
                                state.background, dimg, state.width, n_pix, out)
    red = np.zeros((m + 1, 9))
    _reduce_rows(state.acc_ids, out, red)
    red = red[:m]
    drgb = red[:, 0:3]
    dalpha = red[:, 3]
    dmeans = red[:, 4:6]
    ga, gb, gc = red[:, 6], red[:, 7], red[:, 8]
    gm = np.empty((m, 2, 2))
    gm[:, 0, 0] = ga
    gm[:, 0, 1] = gm[:, 1, 0] = 0.5 * gb
    gm[:, 1, 1] = gc
    inv = np.empty((m, 2, 2))
    inv[:, 0, 0] = conic[:, 0]
    inv[:, 0, 1] = inv[:, 1, 0] = conic[:, 1]
    inv[:, 1, 1] = conic[:, 2]
    dcov = -inv @ gm @ inv
    return dmeans, dcov, drgb, dalpha


# ---------------------------------------------------------------------------
# convenience


@dataclass
class RenderCache:
    proj: ProjectedGaussians
    state: BlendState


def render(attrs, cam, background=(0.0, 0.0, 0.0), return_cache: bool = False, parallel: bool = False):
    proj = project(attrs, cam, keep_cache=return_cache)
    img, state = blend(proj, cam.width, cam.height, background, return_state=True, parallel=parallel)
    return (img, RenderCache(proj, state)) if return_cache else img


def render_backward(cache: RenderCache, dimage) -> dict:
    """Gradients of the image w.r.t. ``mu, rot, scale, rgb, alpha`` over all splats."""
    dmeans, dcov, drgb_p, dalpha_p = blend_backward(cache.state, dimage)
    dmu, drot, dscale = project_backward(cache.proj, dmeans, dcov)
    n = cache.proj.n_total
    drgb = np.zeros((n, 3))
    dalpha = np.zeros(n)
    drgb[cache.proj.index] = drgb_p
    dalpha[cache.proj.index] = dalpha_p
    return dict(mu=dmu, rot=drot, scale=dscale, rgb=drgb, alpha=dalpha)
