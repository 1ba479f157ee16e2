"""Shared finite-difference harness for the end-to-end rendered-loss check."""
import numpy as np

from tensoravatar.blendmix import ExpressionInput
from tensoravatar.geometry import Camera
from tensoravatar.training.losses import LossWeights
from tensoravatar.training.trainer import frame_objective

from conftest import perturbed_model, subset_model


def five_splat_problem(rig, seed: int, offset_target: str = "opacity"):
    """A 5-splat fp64 model, an 8x8 camera, a random target and a loss closure."""
    rng = np.random.default_rng(seed)
    full = perturbed_model(rig, rng, offset_target=offset_target)
    # five front-facing faces near the image centre
    cent = rig.vertices[rig.faces].mean(axis=1)
    front = np.flatnonzero(cent[:, 2] > 0.2)
    faces = rng.choice(front, size=5, replace=False)
    model = subset_model(full, np.searchsorted(full.splats.face_id, faces))
    cam = Camera.look_at(np.array([0.1, 0.1, 2.4]), np.array([0.0, 0.0, 0.2]), np.array([0.0, 1.0, 0.0]), 8, 8,
                         2.1 * 8)
    expr = ExpressionInput(rng.normal(0, 0.6, rig.n_b), rig.jaw_quat(0.2))
    target = rng.uniform(0, 1, (8, 8, 3))
    # tau between the smallest and largest face displacement so both penalty branches are exercised
    weights = LossWeights(lam=0.2, lam_pos=0.5, lam_scale=1.0, lam_op=1.0, tau=0.05, eps_pos=0.02, eps_scale=0.6)

    def loss(with_grad=False):
        (li, lg, lo), g = frame_objective(model, expr, cam, target, weights, with_grad=with_grad)
        total = li + lg + lo
        return (total, g) if with_grad else total

    return model, loss


def check_random_entries(model, loss, rng, n_cases: int, h: float = 1e-5):
    """Relative errors of analytic vs central-difference gradients on random parameter entries."""
    _, grads = loss(True)
    params = model.parameters()
    names = sorted(params)
    errors = []
    for _ in range(n_cases):
        name = names[int(rng.integers(len(names)))]
        flat = params[name].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + h
        lp = loss()
        flat[i] = old - h
        lm = loss()
        flat[i] = old
        fd = (lp - lm) / (2 * h)
        an = float(grads[name].reshape(-1)[i])
        scale = max(abs(fd), abs(an), 1e-3 * float(np.max(np.abs(grads[name]))), 1e-10)
        errors.append((name, abs(an - fd) / scale))
    return errors
