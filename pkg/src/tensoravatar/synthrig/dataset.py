"""Ground-truth multi-view frames rendered from a hidden oracle avatar.

The oracle binds one flattened, jittered splat to each rig triangle and gives
it a smooth analytic colour of its neutral-mesh position. Expressions carve
"wrinkles" into the oracle's opacity: every named blendshape creases the skin
it moves, growing with ``|beta_i|``, and opening the jaw creases the mouth
corners. Creases only form on triangles that moved well away from neutral.
Thinning the front surface reveals the pale hair on the inside of the back of
the head, so the creases read as lighter bands.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..blendmix import jaw_basis_fps
from ..errors import CorruptFile, EmptySplit, IoFailure
from ..geometry import Camera, axis_angle_to_quat, local_to_global, mesh_frames, quat_to_rotmat
from ..imageio import read_raw, write_png, write_raw
from ..raster import render
from .rig import RigConfig, SyntheticRig, build_rig, eval_rig

ORACLE_ALPHA = 0.95
ORACLE_SEED_OFFSET = 7919
WRINKLE_GAIN = 3.0  # creases saturate towards full strength by |beta| ~ 0.6
CREASE_FRACTION = 0.02  # full crease strength once a triangle moved this fraction of the bbox diagonal

SKIN = np.array([0.64, 0.44, 0.35])
HAIR = np.array([0.97, 0.95, 0.86])
LIPS = np.array([0.78, 0.24, 0.28])
BROW = np.array([0.35, 0.24, 0.16])
IRIS = np.array([0.12, 0.16, 0.22])


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _blob(p, center, radii):
    d2 = np.sum(((p - np.asarray(center)) / np.asarray(radii)) ** 2, axis=-1)
    return np.exp(-d2)


def oracle_color(p, rig: SyntheticRig) -> np.ndarray:
    """View-independent RGB of canonical positions ``p``."""
    cfg = rig.config
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    shade = 1.0 + 0.06 * np.cos(9.0 * x) * np.cos(7.0 * y)
    col = SKIN * shade[:, None]
    # hair: crown and back of the head
    hair = np.maximum(_smoothstep(0.33, 0.40, y + 0.25 * np.clip(-z, 0, None)), _smoothstep(0.0, -0.14, z))
    col = col * (1 - hair[:, None]) + HAIR * hair[:, None]
    front = _smoothstep(0.15, 0.30, z)
    lips = _blob(p, (0.0, -0.27, cfg.radius_z), (0.09, 0.035, 0.2)) * front
    col = col * (1 - lips[:, None]) + LIPS * lips[:, None]
    for sx in (-1.0, 1.0):
        eye = _blob(p, (sx * cfg.eye_offset_x, cfg.eye_height, 0.35), (0.04, 0.025, 0.2)) * front
        brow = _blob(p, (sx * cfg.eye_offset_x, cfg.eye_height + 0.075, 0.35), (0.065, 0.014, 0.2)) * front
        col = col * (1 - eye[:, None]) + IRIS * eye[:, None]
        col = col * (1 - brow[:, None]) + BROW * brow[:, None]
    return np.clip(col, 0.0, 1.0)


def wrinkle_patterns(p, face_ids, rig: SyntheticRig, n_named: int = 8) -> dict:
    """Spatial crease masks (values in [0, 1]) at canonical positions ``p`` bound to ``face_ids``.

    Each of the first ``n_named`` blendshapes creases the skin it moves: a plateau
    mask over the triangles it displaces, modulated by stripes whose direction
    differs per shape. ``"corners"`` holds the jaw-driven mouth-corner creases.
    """
    cfg = rig.config
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    front = _smoothstep(0.05, 0.20, z)
    out = {}
    for i, name in enumerate(rig.shape_names[:n_named]):
        mag = np.linalg.norm(rig.deltas[i], axis=1)
        face_mag = mag[rig.faces[face_ids]].mean(axis=1) / max(mag.max(), 1e-12)
        theta = i * np.pi / 5
        t = (x * np.sin(theta) + y * np.cos(theta)) / 0.11
        stripes = 0.5 * (1.0 + np.cos(2 * np.pi * t))
        out[name] = _smoothstep(0.08, 0.35, face_mag) * np.clip(0.25 + stripes, 0, 1) * front
    corners = sum(_blob(p, (sx * 0.11, -0.27, cfg.radius_z), (0.07, 0.08, 0.25)) for sx in (-1.0, 1.0)) * front
    out["corners"] = np.clip(1.3 * corners, 0, 1)
    return out


def oracle_opacity(patterns: dict, beta, jaw_angle: float, max_jaw: float, names=(), gate=1.0) -> np.ndarray:
    """Opacity after creasing.

    Shape ``i``'s crease mask drops opacity by ``tanh(gain * |beta_i|)``; the jaw
    opening drops it at the mouth corners.

    ``gate`` (per splat, in [0, 1]) scales the total drop.
    """
    beta = np.asarray(beta, dtype=float)
    jaw = min(abs(jaw_angle) / max_jaw, 1.0) if max_jaw > 0 else 0.0
    drop = 0.9 * jaw * patterns["corners"]
    for i, name in enumerate(names):
        if name in patterns and i < beta.size:
            drop = drop + 0.95 * np.tanh(WRINKLE_GAIN * abs(beta[i])) * patterns[name]
    return np.clip(ORACLE_ALPHA - drop * gate, 0.0, 1.0)


@dataclass
class OracleFrame:
    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    rgb: np.ndarray
    alpha: np.ndarray


class OracleAvatar:
    """The hidden ground truth behind a generated dataset."""

    def __init__(self, rig: SyntheticRig, max_jaw_deg: float = 20.0):
        self.rig = rig
        self.max_jaw = np.radians(max_jaw_deg)
        # flattened, jittered surfels: the trainable model starts from a different binding
        rng = np.random.default_rng(rig.seed + ORACLE_SEED_OFFSET)
        f = rig.n_faces
        self.mu_local = rng.normal(0.0, [0.12, 0.03, 0.12], (f, 3))
        axes = rng.normal(size=(f, 3))
        self.quat_local = axis_angle_to_quat(axes / np.linalg.norm(axes, axis=1, keepdims=True),
                                             rng.uniform(0.0, np.radians(25.0), f))
        self.rot_local = quat_to_rotmat(self.quat_local)
        self.scale_local = np.stack([rng.uniform(0.4, 0.75, f), np.full(f, 0.15), rng.uniform(0.4, 0.75, f)], 1)
        self.canon = canon = mesh_frames(rig.vertices, rig.faces)
        self.crease_from = CREASE_FRACTION * float(np.linalg.norm(np.ptp(rig.vertices, axis=0)))
        self.p, _, _ = local_to_global(self.mu_local, self.rot_local, self.scale_local, canon)
        self.rgb = oracle_color(self.p, rig)
        self.patterns = wrinkle_patterns(self.p, np.arange(f), rig)

    def attributes(self, beta, jaw_angle: float = 0.0) -> OracleFrame:
        q = self.rig.jaw_quat(jaw_angle)
        fr = mesh_frames(eval_rig(self.rig, beta, q), self.rig.faces)
        mu, rot, scale = local_to_global(self.mu_local, self.rot_local, self.scale_local, fr)
        # skin only creases where it has moved well away from its neutral position
        moved = np.linalg.norm(fr.T - self.canon.T, axis=1)
        gate = _smoothstep(0.5 * self.crease_from, self.crease_from, moved)
        alpha = oracle_opacity(self.patterns, beta, jaw_angle, self.max_jaw, self.rig.shape_names, gate)
        return OracleFrame(mu, rot, scale, self.rgb, alpha)

    def render(self, beta, jaw_angle, cam: Camera, background=0.0) -> np.ndarray:
        return render(self.attributes(beta, jaw_angle), cam, background=(background,) * 3)


@dataclass
class DatasetFrame:
    beta: np.ndarray
    q_jaw: np.ndarray
    camera_id: int
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    expression_id: int = 0


@dataclass
class Dataset:
    rig: SyntheticRig
    cameras: list
    betas: np.ndarray  # (n_expr, n_b)
    jaw_angles: np.ndarray  # (n_expr,)
    large: np.ndarray  # (n_expr,) bool
    holdout: np.ndarray  # (n_expr,) bool, novel expressions
    frames: list = field(default_factory=list)  # DatasetFrame, expression-major

    @property
    def n_expressions(self) -> int:
        return len(self.betas)

    @property
    def image_size(self):
        return self.cameras[0].height, self.cameras[0].width

    def jaw_quat(self, e: int) -> np.ndarray:
        return self.rig.jaw_quat(self.jaw_angles[e])

    def frame_ids(self, split: str = "train", large: bool | None = None) -> np.ndarray:
        """Indices into ``frames`` for ``split`` in {"train", "holdout", "all"}."""
        sel = {"train": ~self.holdout, "holdout": self.holdout, "all": np.ones_like(self.holdout)}[split]
        if large is not None:
            sel = sel & (self.large == large)
        keep = set(np.flatnonzero(sel).tolist())
        ids = [i for i, f in enumerate(self.frames) if f.expression_id in keep]
        return np.asarray(ids, dtype=np.int64)

    def split(self, split: str = "holdout", large: bool | None = None) -> list:
        ids = self.frame_ids(split, large)
        if len(ids) == 0:
            raise EmptySplit(f"no frames in split {split!r} (large={large})")
        return [self.frames[i] for i in ids]

    def expression_meshes(self, expr_ids) -> np.ndarray:
        return np.stack([eval_rig(self.rig, self.betas[e], self.jaw_quat(e)) for e in expr_ids])

    def jaw_candidates(self, n_j: int) -> np.ndarray:
        """Jaw basis rotations by farthest point sampling over the training jaw poses."""
        train = np.flatnonzero(~self.holdout)
        quats = np.stack([self.jaw_quat(e) for e in train])
        quats = np.unique(np.round(quats, 12), axis=0)
        if len(quats) < n_j:
            pad = np.stack([self.rig.jaw_quat(a) for a in np.linspace(0.0, np.radians(20.0), n_j)])
            quats = np.concatenate([quats, pad])
        return quats[jaw_basis_fps(quats, n_j)]


def make_cameras(n_cameras: int, size: int, distance: float = 2.4, arc_deg: float = 70.0,
                 focal_factor: float = 2.1, elevation_deg: float = 5.0) -> list:
    """Cameras on a horizontal frontal arc looking at the origin."""
    az = np.zeros(1) if n_cameras == 1 else np.radians(np.linspace(-arc_deg / 2, arc_deg / 2, n_cameras))
    el = np.radians(elevation_deg)
    cams = []
    for a in az:
        eye = distance * np.array([np.cos(el) * np.sin(a), np.sin(el), np.cos(el) * np.cos(a)])
        cams.append(Camera.look_at(eye, np.zeros(3), np.array([0.0, 1.0, 0.0]), size, size, focal_factor * size))
    return cams


def sample_expressions(n: int, n_b: int, rng, large_fraction: float = 0.2, max_jaw_deg: float = 20.0):
    """Mostly small motions plus a minority of large ones. Returns ``(betas, jaw_angles, large)``."""
    n_large = int(round(large_fraction * n))
    large = np.zeros(n, dtype=bool)
    large[rng.permutation(n)[:n_large]] = True
    betas = np.clip(rng.normal(0.0, 0.1, (n, n_b)), -0.3, 0.3)
    jaw = np.abs(rng.normal(0.0, np.radians(1.5), n))
    for i in np.flatnonzero(large):
        k = rng.integers(1, 4)
        comps = rng.choice(n_b, size=min(k, n_b), replace=False)
        betas[i, comps] = rng.uniform(0.5, 1.0, len(comps)) * rng.choice([-1.0, 1.0], len(comps))
        if rng.random() < 0.5:
            jaw[i] = rng.uniform(0.3, 1.0) * np.radians(max_jaw_deg)
    betas[0] = 0.0  # one exact neutral frame
    jaw[0] = 0.0
    large[0] = False
    return betas, jaw, large


def _holdout_split(large, fraction, rng):
    hold = np.zeros(len(large), dtype=bool)
    for flag in (False, True):
        ids = np.flatnonzero(large == flag)
        ids = ids[ids != 0]  # keep the neutral frame for training
        k = int(round(fraction * len(ids)))
        hold[rng.permutation(ids)[:k]] = True
    return hold


def generate_dataset(rig: SyntheticRig, n_frames: int = 200, n_cameras: int = 4, image_size: int = 64,
                     seed: int = 1, holdout_fraction: float = 0.2, large_fraction: float = 0.2,
                     camera_distance: float = 2.4, camera_arc_deg: float = 70.0, focal_factor: float = 2.1,
                     max_jaw_deg: float = 20.0, parallel: bool = False) -> Dataset:
    """Render ``n_frames`` expressions from every camera. Deterministic per ``seed``.

    ``parallel`` spreads each render over pixels; the output is identical either way.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    betas, jaw, large = sample_expressions(n_frames, rig.n_b, rng, large_fraction, max_jaw_deg)
    hold = _holdout_split(large, holdout_fraction, rng)
    cams = make_cameras(n_cameras, image_size, camera_distance, camera_arc_deg, focal_factor)
    oracle = OracleAvatar(rig, max_jaw_deg)
    frames = []
    for e in range(n_frames):
        attrs = oracle.attributes(betas[e], jaw[e])
        q = rig.jaw_quat(jaw[e])
        for c, cam in enumerate(cams):
            img = np.clip(render(attrs, cam, parallel=parallel), 0.0, 1.0).astype(np.float32)
            frames.append(DatasetFrame(betas[e].copy(), q, c, img, e))
    return Dataset(rig, cams, betas, jaw, large, hold, frames)


# ---------------------------------------------------------------------------
# directory layout
#
#   metadata.txt          key = value lines (see save_dataset)
#   frame_<e>_<c>.raw     raw image of expression e seen from camera c
#   frame_<e>_<c>.png     optional 8-bit preview


def save_dataset(ds: Dataset, directory, png: bool = False) -> Path:
    """Write ``ds`` as ``metadata.txt`` plus one raw image per frame."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {d}: {exc}") from exc
    lines = ["format = tensoravatar-dataset", "version = 1", f"rig.seed = {ds.rig.seed}"]
    for k, v in ds.rig.reference().items():
        if k != "seed":
            lines.append(f"rig.{k} = {v!r}")
    h, w = ds.image_size
    lines += [f"n_expressions = {ds.n_expressions}", f"n_cameras = {len(ds.cameras)}", f"width = {w}",
              f"height = {h}"]
    for c, cam in enumerate(ds.cameras):
        vals = list(cam.R.ravel()) + list(cam.t) + [cam.fx, cam.fy, cam.cx, cam.cy]
        lines.append(f"camera.{c} = " + " ".join(repr(float(v)) for v in vals))
    for e in range(ds.n_expressions):
        beta = " ".join(repr(float(b)) for b in ds.betas[e])
        lines.append(f"expr.{e} = {int(ds.large[e])} {int(ds.holdout[e])} {float(ds.jaw_angles[e])!r} {beta}")
    for f in ds.frames:
        name = f"frame_{f.expression_id:04d}_{f.camera_id}"
        lines.append(f"frame = {f.expression_id} {f.camera_id} {name}.raw")
        write_raw(d / f"{name}.raw", f.image)
        if png:
            write_png(d / f"{name}.png", f.image)
    (d / "metadata.txt").write_text("\n".join(lines) + "\n")
    return d


def _parse_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return {"True": True, "False": False}.get(v, v.strip("'\""))


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    try:
        text = (d / "metadata.txt").read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {d / 'metadata.txt'}: {exc}") from exc
    meta, rig_kw, cams, exprs, frames = {}, {}, {}, {}, []
    for raw in text.splitlines():
        if "=" not in raw:
            continue
        k, v = (s.strip() for s in raw.split("=", 1))
        if k.startswith("rig."):
            rig_kw[k[4:]] = _parse_value(v)
        elif k.startswith("camera."):
            cams[int(k[7:])] = [float(x) for x in v.split()]
        elif k.startswith("expr."):
            exprs[int(k[5:])] = v.split()
        elif k == "frame":
            frames.append(v.split())
        else:
            meta[k] = v
    if meta.get("format") != "tensoravatar-dataset":
        raise CorruptFile(f"{d}: not a dataset directory")
    seed = int(rig_kw.pop("seed"))
    rig = build_rig(RigConfig(**rig_kw), seed)
    w, h = int(meta["width"]), int(meta["height"])
    cameras = []
    for c in range(int(meta["n_cameras"])):
        v = cams[c]
        cameras.append(Camera(np.array(v[:9]).reshape(3, 3), np.array(v[9:12]), v[12], v[13], v[14], v[15], w, h))
    n = int(meta["n_expressions"])
    large = np.array([bool(int(exprs[e][0])) for e in range(n)])
    hold = np.array([bool(int(exprs[e][1])) for e in range(n)])
    jaw = np.array([float(exprs[e][2]) for e in range(n)])
    betas = np.array([[float(b) for b in exprs[e][3:]] for e in range(n)]).reshape(n, rig.n_b)
    out = []
    for e, c, name in frames:
        e, c = int(e), int(c)
        out.append(DatasetFrame(betas[e].copy(), rig.jaw_quat(jaw[e]), c, read_raw(d / name), e))
    return Dataset(rig, cameras, betas, jaw, large, hold, out)
