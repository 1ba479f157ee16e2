"""Image-quality metrics over dataset splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..avatar import render_frame
from ..blendmix import ExpressionInput
from ..errors import EmptySplit
from ..training.losses import ssim

PSNR_CAP = 99.0


def psnr(rendered, target) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; identical images give the 99 dB cap."""
    mse = float(np.mean((np.asarray(rendered, dtype=float) - np.asarray(target, dtype=float)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


@dataclass
class EvalReport:
    psnr: np.ndarray  # per frame
    ssim: np.ndarray

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def table(self) -> str:
        rows = ["frame  psnr_db  ssim"]
        rows += [f"{i:5d}  {p:7.3f}  {s:.5f}" for i, (p, s) in enumerate(zip(self.psnr, self.ssim))]
        rows.append(f" mean  {self.mean_psnr:7.3f}  {self.mean_ssim:.5f}")
        return "\n".join(rows)


def eval_images(pairs) -> EvalReport:
    """Metrics for an iterable of ``(rendered, target)`` image pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptySplit("nothing to evaluate")
    return EvalReport(np.array([psnr(r, t) for r, t in pairs]), np.array([ssim(r, t) for r, t in pairs]))


def eval_metrics(model, frames, cameras, parallel: bool = False) -> EvalReport:
    """Render every dataset frame in ``frames`` with ``model`` and score it against its target."""
    frames = list(frames)
    if not frames:
        raise EmptySplit("the split has no frames")

    def pairs():
        for f in frames:
            img = render_frame(model, ExpressionInput(f.beta, f.q_jaw), cameras[f.camera_id], parallel=parallel)
            yield img, f.image

    return eval_images(pairs())
