"""Image, geometry and truncated opacity losses with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from ..errors import ConfigInvalid, DimensionMismatch

SSIM_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.2  # D-SSIM share of the image loss
    lam_pos: float = 0.01
    lam_scale: float = 1.0
    lam_op: float = 1.0
    tau: float = 0.03  # static/dynamic translation threshold, scene units
    eps_pos: float = 1.0
    eps_scale: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigInvalid("lam must lie in [0, 1]")
        if min(self.lam_pos, self.lam_scale, self.lam_op, self.tau) < 0:
            raise ConfigInvalid("loss weights must be non-negative")


def gaussian_window(size: int = SSIM_SIZE, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img, g):
    # zero-padded "same" separable filter over the two spatial axes
    out = correlate1d(img, g, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, g, axis=1, mode="constant", cval=0.0)


def _as_image(x):
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim == 2 else x


def ssim_map(x, y, return_parts: bool = False):
    """Per-pixel SSIM of ``x`` against ``y`` (``(H, W)`` or ``(H, W, C)``, values in [0, 1])."""
    x, y = _as_image(x), _as_image(y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"image shapes differ: {x.shape} vs {y.shape}")
    g = gaussian_window()
    mx, my = _blur(x, g), _blur(y, g)
    exx, eyy, exy = _blur(x * x, g), _blur(y * y, g), _blur(x * y, g)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    a = 2 * mx * my + SSIM_C1
    b = 2 * cxy + SSIM_C2
    c = mx * mx + my * my + SSIM_C1
    d = vx + vy + SSIM_C2
    s = a * b / (c * d)
    if return_parts:
        return s, (mx, my, a, b, c, d, g)
    return s


def ssim(x, y) -> float:
    return float(np.mean(ssim_map(x, y)))


def ssim_with_grad(x, y):
    """Mean SSIM and its gradient with respect to ``x``."""
    x2, y2 = _as_image(x), _as_image(y)
    s, (mx, my, a, b, c, d, g) = ssim_map(x2, y2, return_parts=True)
    n = s.size
    ds_da = b / (c * d)
    ds_db = a / (c * d)
    ds_dc = -s / c
    ds_dd = -s / d
    # chain through the blurred moments mx, E[x^2], E[xy]
    g_mx = (ds_da * 2 * my - ds_db * 2 * my + ds_dc * 2 * mx - ds_dd * 2 * mx) / n
    g_exx = ds_dd / n
    g_exy = 2 * ds_db / n
    # the window is symmetric, so the adjoint of the blur is the blur itself
    dx = _blur(g_mx, g) + 2 * x2 * _blur(g_exx, g) + y2 * _blur(g_exy, g)
    return float(np.mean(s)), dx.reshape(np.shape(x))


def loss_image(rendered, target, lam: float = 0.2):
    """``(1 - lam) * L1 + lam * (1 - SSIM) / 2`` and its gradient w.r.t. ``rendered``."""
    r = np.asarray(rendered, dtype=float)
    t = np.asarray(target, dtype=float)
    if r.shape != t.shape:
        raise DimensionMismatch(f"image shapes differ: {r.shape} vs {t.shape}")
    diff = r - t
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0:
        s, ds = ssim_with_grad(r, t)
        grad = grad - 0.5 * lam * ds
        dssim = 0.5 * (1.0 - s)
    else:
        dssim = 0.5 * (1.0 - ssim(r, t))
    return (1.0 - lam) * l1 + lam * dssim, grad


def loss_geom(mu_local, log_scale, weights: LossWeights = LossWeights()):
    """Hinge position/scale regularizer on the local splat attributes.

    Returns ``(total, d mu_local, d log_scale)``.
    """
    mu = np.asarray(mu_local, dtype=float)
    ls = np.asarray(log_scale, dtype=float)
    n = max(len(mu), 1)
    norm = np.linalg.norm(mu, axis=1)
    hinge_p = norm - weights.eps_pos
    l_pos = np.sum(np.maximum(hinge_p, 0.0)) / n
    s = np.exp(ls)
    arg = np.argmax(s, axis=1)
    smax = s[np.arange(len(s)), arg]
    hinge_s = smax - weights.eps_scale
    l_scale = np.sum(np.maximum(hinge_s, 0.0)) / n
    total = weights.lam_pos * l_pos + weights.lam_scale * l_scale

    d_mu = np.zeros_like(mu)
    on = (hinge_p > 0) & (norm > 0)
    d_mu[on] = weights.lam_pos * mu[on] / norm[on, None] / n
    d_ls = np.zeros_like(ls)
    act = hinge_s > 0
    d_ls[np.flatnonzero(act), arg[act]] = weights.lam_scale * smax[act] / n
    return float(total), d_mu, d_ls


def static_mask(translation, tau: float) -> np.ndarray:
    """``w_op``: 1 where the triangle moved at most ``tau`` from the neutral mesh."""
    return (np.asarray(translation, dtype=float) <= tau).astype(float)


def loss_opacity_penalty(delta_alpha, translation, weights: LossWeights = LossWeights()):
    """Mean of ``lam_op * |delta_alpha| * w_op``; ``translation`` is each splat's triangle displacement.

    Returns ``(value, d delta_alpha)``.
    """
    da = np.asarray(delta_alpha, dtype=float)
    t = np.asarray(translation, dtype=float)
    if da.shape != t.shape:
        raise DimensionMismatch("need one triangle translation per splat")
    n = max(da.size, 1)
    w = static_mask(t, weights.tau)
    value = weights.lam_op * np.sum(np.abs(da) * w) / n
    return float(value), weights.lam_op * np.sign(da) * w / n
