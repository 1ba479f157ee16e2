import dataclasses

import numpy as np
import pytest

from tensoravatar.avatar import FrameAttributes, FramePass, RigPose, SplatSet, assemble, bind_splats, render_frame
from tensoravatar.blendmix import ExpressionInput
from tensoravatar.errors import InvalidTriangleId
from tensoravatar.geometry import (Camera, axis_angle_to_quat, local_to_global, mesh_frames, quat_normalize,
                                   quat_to_rotmat, triangle_frame)
from tensoravatar.model import init_model
from tensoravatar.raster import render
from tensoravatar.synthrig.rig import eval_rig

from conftest import perturbed_model, tiny_model_config


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def zero_line_model(rig, rng):
    model = perturbed_model(rig, rng)
    model.lines.expr[:] = 0
    model.lines.jaw[:] = 0
    for b in model.opacity.biases:
        b[:] = 0
    return model


def test_bind_counts_and_init(small_rig):
    sp = bind_splats(small_rig, 2)
    assert len(sp) == 2 * small_rig.n_faces
    assert np.array_equal(np.bincount(sp.face_id), np.full(small_rig.n_faces, 2))
    assert np.all(sp.mu_local == 0) and np.all(sp.opacity_logit == 0)
    np.testing.assert_array_equal(sp.quat_local, np.tile([1.0, 0, 0, 0], (len(sp), 1)))
    one = bind_splats(small_rig, 1)
    assert one.face_id.tolist() == list(range(small_rig.n_faces))
    with pytest.raises(ValueError):
        bind_splats(small_rig, 0)


def test_initial_positions_are_centroids(small_rig):
    model = init_model(small_rig, tiny_model_config())
    attrs = assemble(model, ExpressionInput.neutral(3))
    np.testing.assert_allclose(attrs.mu, small_rig.vertices[small_rig.faces].mean(axis=1), atol=1e-12)
    np.testing.assert_allclose(sigmoid(model.splats.opacity_logit), 0.5)


def test_invalid_triangle_id(small_rig):
    sp = bind_splats(small_rig)
    sp.face_id[3] = small_rig.n_faces
    with pytest.raises(InvalidTriangleId):
        sp.validate(small_rig.n_faces)


def test_neutral_zero_lines_gives_canonical_opacity(small_rig, rng):
    model = zero_line_model(small_rig, rng)
    attrs = assemble(model, ExpressionInput.neutral(3))
    np.testing.assert_allclose(attrs.alpha, sigmoid(model.splats.opacity_logit), atol=1e-12)
    assert np.all(attrs.delta_alpha == 0)


def test_near_zero_init_offsets(default_rig):
    from tensoravatar.config import ModelConfig
    model = init_model(default_rig, ModelConfig())
    fp = FramePass(model, ExpressionInput.neutral(default_rig.n_b))
    assert np.max(np.abs(fp.delta_alpha)) < 1e-3


def test_outside_line_box_unaffected_by_expression(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    a = FramePass(model, ExpressionInput(np.zeros(3)))
    b = FramePass(model, ExpressionInput(rng.normal(size=3), small_rig.jaw_quat(0.3)))
    out = ~a.in_lines
    assert out.any() and a.in_lines.any()
    np.testing.assert_array_equal(a.alpha[out], b.alpha[out])
    assert np.all(b.delta_alpha[out] == 0)
    assert not np.allclose(a.alpha[~out], b.alpha[~out])


def test_culling_soundness(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    expr = ExpressionInput(rng.normal(size=3), small_rig.jaw_quat(0.2))
    on, off = FramePass(model, expr, cull=True), FramePass(model, expr, cull=False)
    ins = on.in_lines
    np.testing.assert_array_equal(on.alpha[ins], off.alpha[ins])
    np.testing.assert_array_equal(on.mu, off.mu)


def test_single_splat_matches_geometry_oracle(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    expr = ExpressionInput(rng.normal(size=3), small_rig.jaw_quat(0.1))
    fp = FramePass(model, expr)
    verts = eval_rig(small_rig, expr.beta, expr.q_jaw)
    for s in rng.choice(len(model.splats), 10, replace=False):
        f = small_rig.faces[model.splats.face_id[s]]
        frame = triangle_frame(*verts[f])
        r_local = quat_to_rotmat(quat_normalize(model.splats.quat_local[s]))
        mu, rot, scale = local_to_global(model.splats.mu_local[s], r_local, np.exp(model.splats.log_scale[s]), frame)
        np.testing.assert_allclose(fp.mu[s], mu, atol=1e-12)
        np.testing.assert_allclose(fp.rot[s], rot, atol=1e-12)
        np.testing.assert_allclose(fp.scale[s], scale, atol=1e-12)
        canon = triangle_frame(*small_rig.vertices[f])
        np.testing.assert_allclose(fp.p[s], canon.k * canon.R @ model.splats.mu_local[s] + canon.T, atol=1e-12)


def test_neutral_identity(small_rig, rng, tiny_camera):
    model = perturbed_model(small_rig, rng)
    fp = FramePass(model, ExpressionInput.neutral(3), cam=tiny_camera)
    np.testing.assert_allclose(fp.mu, fp.p, atol=1e-12)
    idx = np.arange(len(fp.alpha))
    v_d, v_c, _ = fp.view_dirs(idx)
    np.testing.assert_allclose(v_c, v_d, atol=1e-12)


def test_opacity_bounds(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    model.splats.opacity_logit[:] = rng.normal(0, 6, len(model.splats))
    for W in model.opacity.weights:
        W *= 20
    for _ in range(5):
        attrs = assemble(model, ExpressionInput(rng.normal(0, 3, 3), small_rig.jaw_quat(rng.uniform(0, 0.4))))
        assert np.all((attrs.alpha >= 0) & (attrs.alpha <= 1))
        assert np.all(np.abs(attrs.delta_alpha) <= 1)
        assert np.all(attrs.scale > 0)


def test_rigid_motion_equivariance(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    expr = ExpressionInput(rng.normal(size=3), small_rig.jaw_quat(0.2))
    q = quat_normalize(rng.normal(size=4))
    t = rng.normal(size=3)
    R = quat_to_rotmat(q)
    a = FramePass(model, expr)
    b = FramePass(model, expr, pose=RigPose(q, t))
    np.testing.assert_allclose(b.mu, a.mu @ R.T + t, atol=1e-12)
    np.testing.assert_allclose(b.rot, np.einsum("ij,njk->nik", R, a.rot), atol=1e-12)
    np.testing.assert_allclose(b.scale, a.scale, atol=1e-12)
    # the head pose does not touch the expression-driven opacity
    np.testing.assert_allclose(b.alpha, a.alpha, atol=1e-12)


def test_colors_need_camera(small_rig, rng):
    model = perturbed_model(small_rig, rng)
    with pytest.raises(ValueError):
        FramePass(model, ExpressionInput.neutral(3)).colors()


def test_lazy_colour_render_matches_full(small_rig, rng, tiny_camera):
    model = perturbed_model(small_rig, rng)
    expr = ExpressionInput(rng.normal(size=3))
    full = render(assemble(model, expr, cam=tiny_camera), tiny_camera)
    lazy = render_frame(model, expr, tiny_camera)
    np.testing.assert_allclose(lazy, full, atol=1e-12)


def mesh_mask(vertices, faces, cam):
    """Pixels whose centre lies inside any projected triangle."""
    x = vertices @ cam.R.T + cam.t
    uv = np.stack([cam.fx * x[:, 0] / x[:, 2] + cam.cx, cam.fy * x[:, 1] / x[:, 2] + cam.cy], axis=1)
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    mask = np.zeros(len(pts), dtype=bool)
    for f in faces:
        a, b, c = uv[f]
        d = lambda p, q, r: (q[0] - p[0]) * (r[:, 1] - p[1]) - (q[1] - p[1]) * (r[:, 0] - p[0])
        s1, s2, s3 = d(a, b, pts), d(b, c, pts), d(c, a, pts)
        mask |= ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
    return mask.reshape(cam.height, cam.width)


def test_initial_render_covers_silhouette(default_rig):
    model = init_model(default_rig, tiny_model_config(n_b=8, dtype="float32", init_scale=0.5))
    cam = Camera.look_at(np.array([0.6, 0.2, 2.3]), np.zeros(3), np.array([0, 1.0, 0]), 48, 48, 2.1 * 48)
    fp = FramePass(model, ExpressionInput.neutral(default_rig.n_b), cam=cam)
    attrs = fp.attributes()
    attrs = dataclasses.replace(attrs, rgb=np.ones((len(attrs), 3)))
    img = render(attrs, cam)
    covered = img[..., 0] > 0.5
    truth = mesh_mask(default_rig.vertices, default_rig.faces, cam)
    iou = np.sum(covered & truth) / np.sum(covered | truth)
    assert iou > 0.5
