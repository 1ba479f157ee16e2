"""Paired training runs that switch one ingredient at a time."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..avatar import FramePass
from ..blendmix import ExpressionInput
from ..config import Config
from ..errors import EmptySplit
from ..training.trainer import TrainLog, loss_weights, train
from .metrics import eval_metrics

ARMS = {
    "full": {},
    "no_lines": {"model.use_lines": False},
    "no_penalty": {"train.lambda_op": 0.0},
    "uniform": {"train.balanced": False},
    "geo_offset": {"model.offset_target": "geometry"},
}


@dataclass
class ArmResult:
    name: str
    config: Config
    log: TrainLog
    model: object = field(repr=False, default=None)
    psnr_holdout: float = float("nan")
    psnr_holdout_large: float = float("nan")
    static_delta_alpha: float = float("nan")


def mean_static_delta_alpha(model, dataset, tau: float, split: str = "holdout") -> float:
    """Mean ``|delta alpha|`` over splats whose triangle moved at most ``tau`` in each frame of the split.

    Only splats inside the feature-line box carry an offset, so the mean is
    taken over those.
    """
    if not model.config.use_lines:
        return 0.0
    if model.config.offset_target != "opacity":
        return float("nan")
    ids = np.flatnonzero(dataset.holdout if split == "holdout" else ~dataset.holdout)
    vals = []
    for e in ids:
        fp = FramePass(model, ExpressionInput(dataset.betas[e], dataset.jaw_quat(e)))
        sel = (fp.face_translation[model.splats.face_id] <= tau) & fp.in_lines
        vals.append(np.abs(fp.delta_alpha[sel]).mean() if sel.any() else 0.0)
    return float(np.mean(vals))


def _split_psnr(model, dataset, cfg: Config, large=None) -> float:
    try:
        frames = dataset.split("holdout", large)
    except EmptySplit:
        return float("nan")
    return eval_metrics(model, frames, dataset.cameras, cfg.train.parallel).mean_psnr


def evaluate_arm(model, dataset, cfg: Config) -> dict:
    """Held-out PSNR (all and large expressions; nan for an empty subset) and static ``|delta alpha|``."""
    return {
        "psnr_holdout": _split_psnr(model, dataset, cfg),
        "psnr_holdout_large": _split_psnr(model, dataset, cfg, large=True),
        "static_delta_alpha": mean_static_delta_alpha(model, dataset, loss_weights(cfg, dataset.rig).tau),
    }


def run_arm(name: str, dataset, base: Config, progress=None) -> ArmResult:
    cfg = base.replace(**ARMS[name]) if name in ARMS else base
    model, log = train(dataset, cfg, progress=progress)
    return ArmResult(name, cfg, log, model, **evaluate_arm(model, dataset, cfg))


def run_ablation(dataset, base: Config, arms=tuple(ARMS), out_dir=None, progress=None) -> dict:
    """Train every arm with the same seeds; writes ``<arm>.log`` files into ``out_dir`` if given."""
    results = {}
    for name in arms:
        res = run_arm(name, dataset, base, progress=None if progress is None else
                      (lambda i, row, n=name: progress(n, i, row)))
        results[name] = res
        if out_dir is not None:
            d = Path(out_dir)
            d.mkdir(parents=True, exist_ok=True)
            (d / f"{name}.log").write_text(res.log.text())
    return results


def summary_table(results: dict) -> str:
    rows = ["arm          psnr_holdout  psnr_holdout_large  static_|da|"]
    for r in results.values():
        rows.append(f"{r.name:<12} {r.psnr_holdout:12.3f}  {r.psnr_holdout_large:18.3f}  {r.static_delta_alpha:11.5f}")
    return "\n".join(rows)
