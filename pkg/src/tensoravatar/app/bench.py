"""Assemble + render throughput and its scaling with the splat count."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from ..avatar import render_frame
from ..blendmix import ExpressionInput
from ..config import ModelConfig
from ..model import init_model
from ..synthrig.dataset import make_cameras


@dataclass
class BenchResult:
    n_splats: int
    seconds_per_frame: float

    @property
    def fps(self) -> float:
        return 1.0 / self.seconds_per_frame


def bench_model(model, cam, n_frames: int = 20, seed: int = 0, warmup: int = 2, parallel: bool = False) -> BenchResult:
    """Median wall time of ``render_frame`` over random expressions."""
    rng = np.random.default_rng(seed)
    n_b = model.rig.n_b
    exprs = [ExpressionInput(rng.normal(0, 0.3, n_b), model.rig.jaw_quat(rng.uniform(0, 0.3)))
             for _ in range(n_frames + warmup)]
    times = []
    for i, e in enumerate(exprs):
        t0 = time.perf_counter()
        render_frame(model, e, cam, parallel=parallel)
        if i >= warmup:
            times.append(time.perf_counter() - t0)
    return BenchResult(len(model.splats), float(np.median(times)))


def scaling(rig, cfg: ModelConfig, counts=(1, 2), n_frames: int = 20, image_size: int = 64, seed: int = 0):
    """Bench results for each splats-per-face count, same rig, camera and expressions."""
    cam = make_cameras(1, image_size)[0]
    out = []
    for c in counts:
        model = init_model(rig, dataclasses.replace(cfg, splats_per_face=c), seed=seed)
        out.append(bench_model(model, cam, n_frames, seed))
    return out


def scaling_exponent(results) -> float:
    """Log-log slope of time against splat count between the first and last result."""
    a, b = results[0], results[-1]
    return float(np.log(b.seconds_per_frame / a.seconds_per_frame) / np.log(b.n_splats / a.n_splats))
