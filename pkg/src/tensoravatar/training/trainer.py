"""The optimization loop: sample a frame, render, score, backpropagate, step."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..avatar import FramePass
from ..blendmix import ExpressionInput
from ..config import Config
from ..model import AvatarModel, init_model
from ..raster import blend_backward, blend_composite, blend_weights, project, project_backward
from .losses import LossWeights, loss_geom, loss_image, loss_opacity_penalty
from .optim import AdamState, adam_step
from .sampling import balanced_sampler, frame_distance_matrix, spectral_cluster, uniform_sampler

LOG_COLUMNS = ("iter", "L_image", "L_geom", "L_op", "psnr_holdout")


@dataclass
class TrainLog:
    header: str = ""
    rows: list = field(default_factory=list)

    def append(self, row: tuple):
        self.rows.append(row)

    def text(self) -> str:
        out = [f"# {line}" for line in self.header.splitlines()]
        out.append(", ".join(LOG_COLUMNS))
        for it, li, lg, lo, ps in self.rows:
            out.append(f"{it}, {li:.8g}, {lg:.8g}, {lo:.8g}, {ps:.4f}")
        return "\n".join(out) + "\n"

    def column(self, name: str) -> np.ndarray:
        j = LOG_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)


def loss_weights(cfg: Config, rig) -> LossWeights:
    lo, hi = rig.vertices.min(axis=0), rig.vertices.max(axis=0)
    t = cfg.train
    return LossWeights(t.lambda_dssim, t.lambda_pos, t.lambda_scale, t.lambda_op,
                       t.tau_fraction * float(np.linalg.norm(hi - lo)), t.eps_pos, t.eps_scale)


def make_sampler(dataset, cfg: Config):
    """Endless training-expression ids, class balanced unless ``train.balanced`` is off."""
    train_expr = np.flatnonzero(~dataset.holdout)
    seed = cfg.train.seed
    if not cfg.train.balanced:
        return (int(train_expr[i]) for i in uniform_sampler(len(train_expr), seed)), None
    dist = frame_distance_matrix(dataset.expression_meshes(train_expr), dataset.rig.eye_vertex_ids)
    clusters = spectral_cluster(dist, min(cfg.train.n_clusters, len(train_expr)), seed)
    return (int(train_expr[i]) for i in balanced_sampler(clusters, seed)), clusters


def frame_objective(model: AvatarModel, expr: ExpressionInput, cam, target, weights: LossWeights,
                    background: float = 0.0, parallel: bool = False, with_grad: bool = True):
    """Training losses of one frame and, optionally, their gradients for every model tensor.

    Returns ``((L_image, L_geom, L_op), grads)``; ``grads`` is ``None`` when ``with_grad`` is off.
    """
    fp = FramePass(model, expr, cam=cam)
    proj = project(fp.attributes(), cam)
    state = blend_weights(proj, cam.width, cam.height, parallel)
    fp.colors(proj.index[state.contributing()])
    image = blend_composite(state, fp.rgb[proj.index], (background,) * 3)

    l_img, dimg = loss_image(image, target, weights.lam)
    sp = model.splats
    l_geom, d_mu_l, d_ls = loss_geom(sp.mu_local, sp.log_scale, weights)
    l_op, d_da = loss_opacity_penalty(fp.delta_alpha, fp.face_translation[sp.face_id], weights)
    if not with_grad:
        return (l_img, l_geom, l_op), None

    dmeans, dcov, drgb_p, dalpha_p = blend_backward(state, dimg)
    dmu, drot, dscale = project_backward(proj, dmeans, dcov)
    n = len(sp)
    drgb = np.zeros((n, 3))
    dalpha = np.zeros(n)
    drgb[proj.index] = drgb_p
    dalpha[proj.index] = dalpha_p
    grads = fp.backward(dmu, drot, dscale, drgb, dalpha, d_delta_alpha=d_da, d_mu_local=d_mu_l, d_log_scale=d_ls)
    return (l_img, l_geom, l_op), grads


class Trainer:
    """Stateful trainer; :meth:`step` runs one iteration."""

    def __init__(self, dataset, cfg: Config, model: AvatarModel | None = None):
        cfg.validate()
        self.dataset = dataset
        self.cfg = cfg
        if model is None:
            model = init_model(dataset.rig, cfg.model, jaw_quats=dataset.jaw_candidates(cfg.model.n_j))
        self.model = model
        self.weights = loss_weights(cfg, dataset.rig)
        self.sampler, self.clusters = make_sampler(dataset, cfg)
        self.rng = np.random.default_rng(cfg.train.seed + 1)
        self.state = AdamState()
        t = cfg.train
        group_lr = {"grid": t.lr_grid, "mlp": t.lr_mlp, "splat": t.lr_splat}
        self.lr = {k: group_lr[AvatarModel.group_of(k)] for k in model.parameters()}
        self.iteration = 0
        self.n_cams = len(dataset.cameras)
        self._frame_index = {(f.expression_id, f.camera_id): f for f in dataset.frames}

    def step(self):
        model, cfg = self.model, self.cfg
        e = next(self.sampler)
        c = int(self.rng.integers(self.n_cams))
        frame = self._frame_index[(e, c)]
        cam = self.dataset.cameras[c]
        (l_img, l_geom, l_op), grads = frame_objective(model, ExpressionInput(frame.beta, frame.q_jaw), cam,
                                                       frame.image, self.weights, cfg.model.background,
                                                       cfg.train.parallel)
        t = cfg.train
        adam_step(model.parameters(), grads, self.state, self.lr, t.adam_beta1, t.adam_beta2, t.adam_eps)
        self.iteration += 1
        return l_img, l_geom, l_op

    def evaluate(self, split: str = "holdout", large: bool | None = None, max_images: int = 0) -> float:
        from ..app.metrics import eval_metrics

        frames = self.dataset.split(split, large)
        if max_images:
            frames = frames[:: max(1, len(frames) // max_images)][:max_images]
        return eval_metrics(self.model, frames, self.dataset.cameras, self.cfg.train.parallel).mean_psnr


def train(dataset, cfg: Config, model: AvatarModel | None = None, progress=None):
    """Train for ``cfg.train.iterations`` steps. Returns ``(model, TrainLog)``.

    ``progress`` (optional) is called as ``progress(iteration, row)`` after
    every logged row.
    """
    tr = Trainer(dataset, cfg, model)
    log = TrainLog(header=cfg.to_text())
    t = cfg.train
    every = t.eval_every
    start = time.perf_counter()
    for i in range(1, t.iterations + 1):
        l_img, l_geom, l_op = tr.step()
        ps = np.nan
        if (every and i % every == 0) or i == t.iterations:
            ps = tr.evaluate("holdout", max_images=t.eval_max_images)
        row = (i, l_img, l_geom, l_op, ps)
        log.append(row)
        if progress is not None:
            progress(i, row)
    tr.elapsed = time.perf_counter() - start
    return tr.model, log
