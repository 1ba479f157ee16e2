"""Per-frame assembly of render-ready splat attributes, and its reverse pass.

For a frame the pipeline is

1. evaluate the rig (expression + jaw, then the global head pose) and build
   the deformed and neutral triangle frames;
2. place every splat in canonical space (neutral mesh) to obtain the field
   sampling position ``p``;
3. decode the expression offset from the mixed feature lines, for splats
   inside the feature-line box only;
4. place the splats in deformed space;
5. decode colour from triplane features and the canonicalized view direction.

:class:`FramePass` keeps every intermediate needed by :meth:`FramePass.backward`.
Colour is evaluated lazily so a trainer can skip splats that reach no pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blendmix import ExpressionInput, jaw_weights
from .decoder import (decode_color, decode_color_backward, decode_opacity_offset,
                      decode_opacity_offset_backward)
from .errors import InvalidTriangleId
from .fields import (line_sample_array, line_sample_array_backward, normalize_points, triplane_sample,
                     triplane_sample_backward)
from .geometry import (IDENTITY_QUAT, Camera, TriangleFrame, mesh_frames, quat_normalize, quat_to_rotmat,
                       quat_to_rotmat_backward)
from .synthrig.rig import eval_rig


@dataclass
class SplatSet:
    mu_local: np.ndarray  # (N, 3)
    quat_local: np.ndarray  # (N, 4), normalized on use
    log_scale: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    face_id: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return len(self.face_id)

    def validate(self, n_faces: int):
        n = len(self.face_id)
        for name in ("mu_local", "quat_local", "log_scale", "opacity_logit"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValueError(f"splat field {name} has {len(arr)} rows, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"splat field {name} is not finite")
        if n and (self.face_id.min() < 0 or self.face_id.max() >= n_faces):
            raise InvalidTriangleId(f"triangle ids must lie in [0, {n_faces})")

    @property
    def scale_local(self) -> np.ndarray:
        return np.exp(self.log_scale)


def bind_splats(rig, count: int = 1, scale_fraction: float = 0.5, dtype=np.float64) -> SplatSet:
    """``count`` splats per face at the triangle origin, identity rotation, opacity 0.5."""
    if count < 1:
        raise ValueError("need at least one splat per face")
    face_id = np.repeat(np.arange(rig.n_faces), count)
    n = len(face_id)
    return SplatSet(
        mu_local=np.zeros((n, 3), dtype=dtype),
        quat_local=np.tile(IDENTITY_QUAT, (n, 1)).astype(dtype),
        log_scale=np.full((n, 3), np.log(scale_fraction), dtype=dtype),
        opacity_logit=np.zeros(n, dtype=dtype),
        face_id=face_id,
    )


@dataclass(frozen=True)
class RigPose:
    """Global rigid head transform applied after the rig deformation."""

    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, v):
        R = quat_to_rotmat(quat_normalize(self.rotation))
        if np.array_equal(R, np.eye(3)) and not np.any(self.translation):
            return v
        return v @ R.T + np.asarray(self.translation, dtype=float)


@dataclass
class FrameAttributes:
    mu: np.ndarray  # (N, 3)
    rot: np.ndarray  # (N, 3, 3)
    scale: np.ndarray  # (N, 3)
    rgb: np.ndarray  # (N, 3)
    alpha: np.ndarray  # (N,)
    delta_alpha: np.ndarray | None = None  # (N,)
    canonical: np.ndarray | None = None  # (N, 3) field sampling positions
    in_lines: np.ndarray | None = None  # (N,) inside the feature-line box

    def __len__(self) -> int:
        return len(self.alpha)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class FramePass:
    """Forward evaluation of one frame with everything cached for the reverse pass."""

    def __init__(self, model, expr: ExpressionInput, pose: RigPose | None = None, cam: Camera | None = None,
                 cull: bool | None = None, deformed_vertices=None):
        self.model = model
        cfg = model.config
        self.cam = cam
        sp = model.splats
        fid = sp.face_id
        self.dtype = model.dtype
        self.expr = expr.truncated(model.rig.n_b) if expr.beta.size != model.rig.n_b else expr
        if deformed_vertices is None:
            deformed_vertices = eval_rig(model.rig, self.expr.beta, self.expr.q_jaw)
            if pose is not None:
                deformed_vertices = pose.apply(deformed_vertices)
        self.vertices = deformed_vertices
        fd = mesh_frames(deformed_vertices, model.rig.faces)
        fc = model.canonical_frames
        self.face_translation = np.linalg.norm(fd.T - fc.T, axis=1)
        self.Rd, self.Td, self.kd = fd.R[fid], fd.T[fid], fd.k[fid]
        self.Rc, self.Tc, self.kc = fc.R[fid], fc.T[fid], fc.k[fid]

        mu_l = sp.mu_local.astype(float)
        self.p = self.kc[:, None] * np.einsum("nij,nj->ni", self.Rc, mu_l) + self.Tc

        # expression-dependent offsets
        n = len(sp)
        self.use_lines = cfg.use_lines
        self.geometry_mode = cfg.offset_target == "geometry"
        cull = cfg.cull if cull is None else cull
        bank = model.lines
        if self.use_lines:
            _, inside, _ = normalize_points(self.p, bank.bbox_min, bank.bbox_max)
            self.in_lines = np.all(inside, axis=1) if cull else np.ones(n, dtype=bool)
            self.line_idx = np.flatnonzero(self.in_lines)
            beta = self.expr.beta[:bank.n_b]
            self.beta_lines = beta
            self.jaw_w = jaw_weights(self.expr.q_jaw, bank.jaw_quats)
            self.mixed_b = np.tensordot(beta.astype(self.dtype), bank.expr, axes=1)
            self.mixed_r = np.tensordot(self.jaw_w.astype(self.dtype), bank.jaw, axes=1)
            pl = self.p[self.line_idx]
            lb = line_sample_array(self.mixed_b, bank.bbox_min, bank.bbox_max, pl).astype(self.dtype)
            lr = line_sample_array(self.mixed_r, bank.bbox_min, bank.bbox_max, pl).astype(self.dtype)
            out, self.op_cache = decode_opacity_offset(lb, lr, model.opacity, return_cache=True)
            out = np.asarray(out, dtype=float).reshape(len(self.line_idx), -1)
        else:
            self.in_lines = np.zeros(n, dtype=bool)
            self.line_idx = np.zeros(0, dtype=np.int64)
            out = np.zeros((0, 1))
        self.delta_alpha = np.zeros(n)
        self.offsets = None
        if self.geometry_mode:
            self.offsets = np.zeros((n, out.shape[1] if len(out) else 10))
            self.offsets[self.line_idx] = out
        else:
            self.delta_alpha[self.line_idx] = out[:, 0] if len(out) else 0.0

        # deformed-space geometry
        mu_e, q_e, ls_e = mu_l, sp.quat_local.astype(float), sp.log_scale.astype(float)
        if self.geometry_mode:
            o = self.offsets
            mu_e = mu_e + cfg.geo_offset_pos * o[:, 0:3]
            q_e = q_e + cfg.geo_offset_rot * o[:, 3:7]
            ls_e = ls_e + cfg.geo_offset_scale * o[:, 7:10]
        self.mu_eff, self.q_eff, self.ls_eff = mu_e, q_e, ls_e
        self.rot_local = quat_to_rotmat(quat_normalize(q_e))
        self.mu = self.kd[:, None] * np.einsum("nij,nj->ni", self.Rd, mu_e) + self.Td
        self.rot = np.einsum("nij,njk->nik", self.Rd, self.rot_local)
        self.scale_local = np.exp(ls_e)
        self.scale = self.kd[:, None] * self.scale_local

        self.alpha_c = _sigmoid(sp.opacity_logit.astype(float))
        raw = self.alpha_c + self.delta_alpha
        self.alpha_pass = (raw > 0.0) & (raw < 1.0)
        self.alpha = np.clip(raw, 0.0, 1.0)

        self.rgb = np.zeros((n, 3))
        self.color_idx = None
        self.color_cache = None

    # -- colour --------------------------------------------------------------

    def view_dirs(self, idx):
        d = self.mu[idx] - self.cam.center
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        v_d = d / norm
        v_c = np.einsum("nij,nj->ni", self.Rc[idx], np.einsum("nji,nj->ni", self.Rd[idx], v_d))
        return v_d, v_c, norm

    def colors(self, idx=None) -> np.ndarray:
        """Decode colour for splats ``idx`` (all if ``None``); other rows remain zero."""
        if self.cam is None:
            raise ValueError("colour needs a camera for the view direction")
        model = self.model
        idx = np.arange(len(self.alpha)) if idx is None else np.asarray(idx)
        self.color_idx = idx
        feat = triplane_sample(model.triplane, self.p[idx]).astype(self.dtype) if len(idx) else np.zeros(
            (0, model.triplane.n_features), dtype=self.dtype)
        v_d, v_c, norm = self.view_dirs(idx)
        rgb, cache = decode_color(feat, v_c.astype(self.dtype), model.color, model.posenc, return_cache=True)
        self.color_cache = (feat, v_d, v_c, norm, cache)
        self.rgb = np.zeros((len(self.alpha), 3))
        self.rgb[idx] = rgb
        return self.rgb

    def attributes(self) -> FrameAttributes:
        return FrameAttributes(self.mu, self.rot, self.scale, self.rgb, self.alpha, self.delta_alpha, self.p,
                               self.in_lines)

    # -- reverse pass ----------------------------------------------------------

    def backward(self, d_mu=None, d_rot=None, d_scale=None, d_rgb=None, d_alpha=None, d_delta_alpha=None,
                 d_mu_local=None, d_log_scale=None) -> dict:
        """Gradients for every trainable tensor of the model, keyed like ``model.parameters()``.

        ``d_mu_local``/``d_log_scale`` are direct gradients on the stored
        splat parameters (e.g. from the geometry regularizer).
        """
        model = self.model
        cfg = model.config
        n = len(self.alpha)
        d_mu = np.zeros((n, 3)) if d_mu is None else np.array(d_mu, dtype=float)
        dp = np.zeros((n, 3))
        grads = {}

        # colour
        if d_rgb is not None and self.color_idx is not None:
            idx = self.color_idx
            feat, v_d, v_c, norm, cache = self.color_cache
            cg, dfeat, dvc = decode_color_backward(feat, v_c, model.color, d_rgb[idx].astype(self.dtype), cache,
                                                   model.posenc)
            for k, v in cg.items():
                grads[f"color.{k}"] = v
            if len(idx):
                tg, dpi = triplane_sample_backward(model.triplane, self.p[idx], dfeat.astype(float))
                for k, v in tg.items():
                    grads[f"triplane.{k}"] = v
                dp[idx] += dpi
                dvd = np.einsum("nij,nj->ni", self.Rd[idx], np.einsum("nji,nj->ni", self.Rc[idx], dvc))
                d_mu[idx] += (dvd - v_d * np.sum(v_d * dvd, axis=1, keepdims=True)) / norm

        # deformed geometry
        d_mu_eff = self.kd[:, None] * np.einsum("nji,nj->ni", self.Rd, d_mu)
        d_q_eff = np.zeros((n, 4))
        if d_rot is not None:
            d_rl = np.einsum("nji,njk->nik", self.Rd, d_rot)
            d_q_eff = quat_to_rotmat_backward(self.q_eff, d_rl)
        d_ls_eff = np.zeros((n, 3))
        if d_scale is not None:
            d_ls_eff = d_scale * self.kd[:, None] * self.scale_local

        # opacity
        d_raw = np.zeros(n) if d_alpha is None else np.asarray(d_alpha, dtype=float) * self.alpha_pass
        a = self.alpha_c
        d_logit = d_raw * a * (1.0 - a)
        d_da = d_raw.copy()
        if d_delta_alpha is not None:
            d_da += d_delta_alpha

        d_mu_local = d_mu_eff + (0.0 if d_mu_local is None else d_mu_local)
        d_log_scale = d_ls_eff + (0.0 if d_log_scale is None else d_log_scale)

        if self.use_lines:
            li = self.line_idx
            if self.geometry_mode:
                d_out = np.concatenate([cfg.geo_offset_pos * d_mu_eff[li], cfg.geo_offset_rot * d_q_eff[li],
                                        cfg.geo_offset_scale * d_ls_eff[li]], axis=1)
            else:
                d_out = d_da[li][:, None]
            og, dlb, dlr = decode_opacity_offset_backward(model.opacity, d_out.astype(self.dtype), self.op_cache,
                                                          3 * model.lines.n_d2)
            for k, v in og.items():
                grads[f"opacity.{k}"] = v
            bank = model.lines
            pl = self.p[li]
            dmb, dpb = line_sample_array_backward(self.mixed_b, bank.bbox_min, bank.bbox_max, pl, dlb.astype(float))
            dmr, dpr = line_sample_array_backward(self.mixed_r, bank.bbox_min, bank.bbox_max, pl, dlr.astype(float))
            dp[li] += dpb + dpr
            d_expr = np.zeros(bank.expr.shape)
            d_expr[:len(self.beta_lines)] = self.beta_lines[:, None, None, None] * dmb[None]
            grads["lines.expr"] = d_expr
            grads["lines.jaw"] = self.jaw_w[:, None, None, None] * dmr[None]

        d_mu_local = d_mu_local + self.kc[:, None] * np.einsum("nji,nj->ni", self.Rc, dp)
        grads["splats.mu_local"] = d_mu_local
        grads["splats.quat_local"] = d_q_eff
        grads["splats.log_scale"] = d_log_scale
        grads["splats.opacity_logit"] = d_logit
        params = model.parameters()
        out = {}
        for k, ref in params.items():
            g = grads.get(k)
            out[k] = np.zeros_like(ref) if g is None else np.asarray(g).astype(ref.dtype, copy=False)
        return out


def assemble(model, expr: ExpressionInput, pose: RigPose | None = None, cam: Camera | None = None,
             cull: bool | None = None) -> FrameAttributes:
    """Render-ready attributes of every splat for one frame."""
    fp = FramePass(model, expr, pose, cam, cull)
    if cam is not None:
        fp.colors()
    return fp.attributes()


def render_frame(model, expr: ExpressionInput, cam: Camera, pose: RigPose | None = None, parallel: bool = False):
    """Render one frame through the lazy-colour path (colours only for splats that reach a pixel)."""
    from .raster import blend_composite, blend_weights, project

    fp = FramePass(model, expr, pose, cam)
    proj = project(fp.attributes(), cam, keep_cache=False)
    state = blend_weights(proj, cam.width, cam.height, parallel)
    fp.colors(proj.index[state.contributing()])
    bg = (model.config.background,) * 3
    return blend_composite(state, fp.rgb[proj.index], bg)
