"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The component checks are reused from the unit-test modules. The training
criteria (6 and 7) train five paired arms for the full default budget, which
takes hours on one core. Trained weights are cached under
``$TENSORAVATAR_ACCEPTANCE_CACHE`` (default ``<repo>/.acceptance_cache``) in a
directory keyed by a hash of the package sources and the configuration, so any
code or config change retrains from scratch. Metrics are always recomputed
from the cached weights. Prefill the cache with
``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import contextlib
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

import test_blendmix as tb  # noqa: E402
import test_decoder as td  # noqa: E402
import test_fields as tf  # noqa: E402
import test_geometry as tg  # noqa: E402
import test_losses as tl  # noqa: E402
import test_optim as to  # noqa: E402
import test_raster as tr  # noqa: E402
import test_sampling as ts  # noqa: E402
from gradcheck import check_random_entries, five_splat_problem  # noqa: E402

from tensoravatar.app.ablation import ARMS, evaluate_arm  # noqa: E402
from tensoravatar.config import Config  # noqa: E402
from tensoravatar.synthrig.rig import RigConfig, build_rig  # noqa: E402

MIB = 1024 * 1024
ROOT = TESTS.parent
ARM_ORDER = ("full", "no_lines", "no_penalty", "uniform", "geo_offset")


@contextlib.contextmanager
def criterion(capsys, n: int, title: str, budget_s: float | None = None):
    """Run the body, then print ``ACCEPTANCE <n> PASS|FAIL`` with timing; re-raise failures.

    The body may add measured values to the line through the yielded dict's ``"detail"``.
    """
    t0 = time.perf_counter()
    err = None
    info = {"detail": ""}
    try:
        yield info
    except Exception as exc:  # noqa: BLE001
        err = exc
    dt = time.perf_counter() - t0
    if err is None and budget_s is not None and dt > budget_s:
        err = AssertionError(f"runtime {dt:.1f} s exceeds {budget_s:.0f} s")
    status = "PASS" if err is None else "FAIL"
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {status}: {title}{info['detail']} ({dt:.1f} s)"
              + ("" if err is None else f" -- {err}"))
    if err is not None:
        raise err


def seeded(i):
    return np.random.default_rng(1000 + i)


def run_all(checks):
    """Call each check with a fresh seeded generator where it takes one."""
    for i, (fn, needs_rng) in enumerate(checks):
        fn(seeded(i)) if needs_rng else fn()


# ---------------------------------------------------------------- 1: storage

def test_criterion_1_storage(capsys):
    from tensoravatar.app.io import encode
    from tensoravatar.config import full_scale_model_config
    from tensoravatar.model import init_model

    with criterion(capsys, 1, "full-scale storage figures", budget_s=1.0):
        cfg = full_scale_model_config()
        rig = build_rig(RigConfig(n_lat=8, n_lon=10, n_b=cfg.n_b), seed=0)
        _, rep = encode(init_model(rig, cfg))
        tri, lines = rep.triplane_with_decoder / MIB, rep.lines_with_decoder / MIB
        assert rep.sections["triplane"] == 4_194_304, rep.sections["triplane"]
        assert abs(tri - 4.05) / 4.05 < 0.10, f"triplane+decoder {tri:.3f} MiB"
        assert abs(lines - 2.41) / 2.41 < 0.10, f"lines+decoder {lines:.3f} MiB"


# ---------------------------------------------------------------- 2: gradients

def _end_to_end(offset_target: str, n_cases: int = 100):
    rig = build_rig(RigConfig(n_lat=8, n_lon=10, n_b=3), seed=0)
    errs = []
    for seed in range(4):
        model, loss = five_splat_problem(rig, seed=seed, offset_target=offset_target)
        errs += check_random_entries(model, loss, np.random.default_rng(seed), n_cases // 4)
    worst = max(e for _, e in errs)
    assert len(errs) >= n_cases and worst < 1e-4, f"{offset_target}: worst rel err {worst:.2e}"


def test_criterion_2_gradients(capsys):
    with criterion(capsys, 2, "analytic gradients vs central differences", budget_s=120.0):
        run_all([
            (tf.test_triplane_grid_gradient_fd, True),  # linear: 1e-6
            (tf.test_triplane_position_gradient_fd, True),
            (tf.test_line_gradients_fd, True),  # linear in the lines: 1e-6
            (td.test_mlp_weight_gradients_fd, True),
            (td.test_mlp_input_gradient_fd, True),
            (td.test_color_decoder_backward_fd, True),
            (td.test_opacity_decoder_backward_fd, True),
            (tl.test_loss_image_gradient_fd, True),
            (tl.test_ssim_gradient_fd, True),
            (tl.test_loss_geom_gradient_fd, True),
            (tl.test_penalty_gradient_fd, True),
            (tr.test_render_backward_fd, True),
        ])
        _end_to_end("opacity")
        _end_to_end("geometry")


# ---------------------------------------------------------------- 3: oracles

def test_criterion_3_oracles(capsys):
    with criterion(capsys, 3, "brute-force oracle equivalences", budget_s=60.0):
        run_all([
            (tf.test_triplane_matches_brute_force, True),
            (tf.test_line_matches_brute_force, True),
            (tb.test_expression_mix_brute_force, True),
            (tb.test_jaw_mix_brute_force, True),
            (tb.test_fps_matches_brute_force, True),
            (tl.test_ssim_matches_sliding_window_oracle, True),
            (ts.test_distance_brute_force, True),
            (to.test_matches_reference_on_quadratic, True),
        ])


# ---------------------------------------------------------------- 4: invariants

def test_criterion_4_invariants(capsys):
    with criterion(capsys, 4, "formula invariants", budget_s=30.0):
        run_all([
            (tg.test_round_trip_random, True),
            (tg.test_quat_distance_examples, False),
            (tg.test_quat_distance_metric_properties, False),
            (tb.test_jaw_weights_sum_to_one_and_sign_invariant, False),
            (tl.test_penalty_truncation_randomized, True),
        ])


# ---------------------------------------------------------------- 5: sampling

def test_criterion_5_sampling(capsys):
    with criterion(capsys, 5, "balanced sampler and spectral clustering", budget_s=60.0):
        run_all([
            (ts.test_balanced_frequencies, False),  # cluster sizes 90 / 10
            (ts.test_planted_three_groups, True),
        ])


# ---------------------------------------------------------------- 6, 7: training

def source_digest(cfg: Config) -> str:
    h = hashlib.sha256(cfg.to_text().encode())
    for p in sorted((ROOT / "src" / "tensoravatar").rglob("*.py")):
        h.update(p.relative_to(ROOT).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cache_dir(cfg: Config) -> Path:
    base = Path(os.environ.get("TENSORAVATAR_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
    return base / source_digest(cfg)


def default_dataset(cfg: Config):
    from tensoravatar.synthrig.dataset import generate_dataset

    d = cfg.data
    rig = build_rig(cfg.rig, d.rig_seed)
    return generate_dataset(rig, d.n_frames, d.n_cameras, d.image_size, d.seed, d.holdout_fraction,
                            d.large_fraction, d.camera_distance, d.camera_arc_deg, d.focal_factor, d.max_jaw_deg)


def trained_arms(cfg: Config | None = None, verbose: bool = False) -> dict:
    """Metrics of every ablation arm, training (and caching) any arm without cached weights."""
    from tensoravatar.app.io import load, save
    from tensoravatar.training.trainer import train

    cfg = cfg or Config()
    out = cache_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ds = default_dataset(cfg)
    results = {}
    for name in ARM_ORDER:
        arm_cfg = cfg.replace(**ARMS[name])
        path = out / f"{name}.ctav"
        if not path.exists():
            t0 = time.time()
            progress = None
            if verbose:
                progress = lambda i, row, n=name: print(f"{n} {i} {time.time() - t0:.0f}s", flush=True) \
                    if i % 1000 == 0 else None
            model, log = train(ds, arm_cfg, progress=progress)
            (out / f"{name}.log").write_text(log.text())
            save(model, path.with_suffix(".tmp"))
            path.with_suffix(".tmp").rename(path)
        results[name] = evaluate_arm(load(path), ds, arm_cfg)
        if verbose:
            print(name, results[name], flush=True)
    return results


@pytest.fixture(scope="module")
def arms():
    return trained_arms()


@pytest.mark.slow
def test_criterion_6_end_to_end(capsys, arms):
    full, nl = arms["full"]["psnr_holdout"], arms["no_lines"]["psnr_holdout"]
    with criterion(capsys, 6, f"held-out PSNR full {full:.2f} dB, no_lines {nl:.2f} dB"):
        assert full >= 28.0, f"full held-out PSNR {full:.2f} < 28"
        assert full - nl >= 0.3, f"full - no_lines = {full - nl:.3f} dB < 0.3"


@pytest.mark.slow
def test_criterion_7_ablation_directions(capsys, arms):
    a = arms
    detail = (f"static |da| {a['full']['static_delta_alpha']:.4f} vs {a['no_penalty']['static_delta_alpha']:.4f}; "
              f"large PSNR {a['full']['psnr_holdout_large']:.2f} vs {a['uniform']['psnr_holdout_large']:.2f}; "
              f"geo {a['geo_offset']['psnr_holdout']:.2f} vs {a['full']['psnr_holdout']:.2f}")
    with criterion(capsys, 7, detail):
        fails = []
        if not a["full"]["static_delta_alpha"] < a["no_penalty"]["static_delta_alpha"]:
            fails.append("(a) penalty did not lower static |da|")
        if not a["full"]["psnr_holdout_large"] >= a["uniform"]["psnr_holdout_large"]:
            fails.append("(b) balanced sampling lowered held-out large PSNR")
        if not a["geo_offset"]["psnr_holdout"] < a["full"]["psnr_holdout"]:
            fails.append("(c) geometry offsets did not degrade held-out PSNR")
        assert not fails, "; ".join(fails)


# ---------------------------------------------------------------- 8: scaling

def test_criterion_8_scaling(capsys):
    from tensoravatar.app.bench import scaling, scaling_exponent

    cfg = Config()
    with criterion(capsys, 8, "time vs splat count exponent") as info:
        res = scaling(build_rig(cfg.rig, cfg.data.rig_seed), cfg.model, counts=(1, 2), n_frames=10)
        k = scaling_exponent(res)
        info["detail"] = f" {k:.2f} ({res[0].fps:.1f} -> {res[1].fps:.1f} frames/s)"
        assert k <= 2.0, f"exponent {k:.2f}: more than 2x a linear slope"


if __name__ == "__main__":
    for name, metrics in trained_arms(verbose=True).items():
        print(name, metrics)
