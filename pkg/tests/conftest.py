import numpy as np
import pytest

from tensoravatar.config import ModelConfig
from tensoravatar.geometry import Camera
from tensoravatar.avatar import SplatSet
from tensoravatar.model import AvatarModel, init_model
from tensoravatar.synthrig.rig import RigConfig, build_rig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_rig():
    return build_rig(RigConfig(n_lat=8, n_lon=10, n_b=3), seed=0)


@pytest.fixture(scope="session")
def default_rig():
    return build_rig(seed=0)


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(triplane_res=4, triplane_c_xy=2, triplane_c_side=2, line_res=4, line_dim=2, n_b=3, n_j=2,
                hidden=8, hidden_layers=1, dtype="float64", grid_init=0.3, init_scale=1.2)
    base.update(kw)
    return ModelConfig(**base)


def perturbed_model(rig, rng, **kw):
    """Tiny fp64 model with every parameter moved off its initial value."""
    jaw = np.array([rig.jaw_quat(0.0), rig.jaw_quat(0.3)])
    model = init_model(rig, tiny_model_config(**kw), jaw_quats=jaw)
    for k, v in model.parameters().items():
        big = k.startswith(("lines", "triplane", "opacity.W", "color.W"))
        v += rng.normal(0, 0.3 if big else 0.05, v.shape)
    return model


@pytest.fixture
def tiny_camera():
    return Camera.look_at(np.array([0.4, 0.2, 2.4]), np.zeros(3), np.array([0.0, 1.0, 0.0]), 16, 16, 2.1 * 16)


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def central_diff(f, x, idx, h=1e-6):
    """d f / d x[idx] by central differences, restoring ``x`` afterwards."""
    flat = x.reshape(-1)
    old = flat[idx]
    flat[idx] = old + h
    fp = f()
    flat[idx] = old - h
    fm = f()
    flat[idx] = old
    return (fp - fm) / (2 * h)


def subset_model(model, splat_ids):
    """The same fields and decoders, keeping only the splats ``splat_ids``."""
    sp = model.splats
    k = np.asarray(splat_ids)
    splats = SplatSet(sp.mu_local[k].copy(), sp.quat_local[k].copy(), sp.log_scale[k].copy(),
                      sp.opacity_logit[k].copy(), sp.face_id[k].copy())
    return AvatarModel(splats, model.triplane, model.lines, model.color, model.opacity, model.rig, model.config)
