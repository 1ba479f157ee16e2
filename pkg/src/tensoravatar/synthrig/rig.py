"""A parametric head stand-in: ellipsoidal UV sphere, compact-support blendshapes, hinged jaw."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigInvalid, DimensionMismatch
from ..geometry import axis_angle_to_quat, quat_to_rotmat

LABEL_OTHER, LABEL_EYE, LABEL_JAW, LABEL_STATIC = 0, 1, 2, 3
LABEL_NAMES = {LABEL_OTHER: "other", LABEL_EYE: "eye", LABEL_JAW: "jaw", LABEL_STATIC: "static"}

# (name, surface anchor as (azimuth deg, elevation deg), support radius,
#  amplitude, displacement mode). Azimuth 0 faces +z.
_NAMED_SHAPES = [
    ("brow_raise", (0.0, 30.0), 0.24, 0.150, "up"),
    ("cheek_puff_l", (38.0, -12.0), 0.14, 0.090, "normal"),
    ("cheek_puff_r", (-38.0, -12.0), 0.14, 0.090, "normal"),
    ("smile_l", (20.0, -22.0), 0.15, 0.130, "up_out"),
    ("smile_r", (-20.0, -22.0), 0.15, 0.130, "up_out"),
    ("blink", (0.0, 11.0), 0.16, 0.060, "down"),
    ("pucker", (0.0, -33.0), 0.11, 0.090, "forward"),
    ("nose_wrinkle", (0.0, 4.0), 0.08, 0.060, "up"),
]


@dataclass(frozen=True)
class RigConfig:
    n_lat: int = 40
    n_lon: int = 64
    n_b: int = 8
    radius_x: float = 0.38
    radius_y: float = 0.50
    radius_z: float = 0.42
    chin_taper: float = 0.18
    jaw_below: float = -0.14  # jaw region: y below this ...
    jaw_front: float = 0.12  # ... and z above this
    jaw_pivot_y: float = -0.08
    jaw_pivot_z: float = -0.02
    eye_radius: float = 0.09
    eye_offset_x: float = 0.14
    eye_height: float = 0.08

    def validate(self):
        if self.n_b < 1:
            raise ConfigInvalid("rig needs n_b >= 1")
        if self.n_lat < 3 or self.n_lon < 3:
            raise ConfigInvalid("rig sphere needs n_lat >= 3 and n_lon >= 3")
        if 2 + (self.n_lat - 1) * self.n_lon < 12:
            raise ConfigInvalid("rig needs at least 12 vertices")
        if min(self.radius_x, self.radius_y, self.radius_z) <= 0:
            raise ConfigInvalid("radii must be positive")


@dataclass
class SyntheticRig:
    vertices: np.ndarray  # (V, 3) neutral mesh
    faces: np.ndarray  # (F, 3)
    deltas: np.ndarray  # (n_b, V, 3)
    jaw_mask: np.ndarray  # (V,) bool
    jaw_pivot: np.ndarray  # (3,)
    jaw_axis: np.ndarray  # (3,) opening axis; positive angle opens the mouth
    labels: np.ndarray  # (V,) int, see LABEL_*
    config: RigConfig
    seed: int
    shape_names: tuple = ()

    @property
    def n_b(self) -> int:
        return self.deltas.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def eye_vertex_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels == LABEL_EYE)

    def face_labels(self) -> np.ndarray:
        """A face is static/eye/jaw only if all three vertices carry that label."""
        fl = self.labels[self.faces]
        out = np.full(self.n_faces, LABEL_OTHER)
        for lab in (LABEL_STATIC, LABEL_JAW, LABEL_EYE):
            out[np.all(fl == lab, axis=1)] = lab
        return out

    def bbox(self, pad: float = 0.1):
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        ext = hi - lo
        return lo - pad * ext, hi + pad * ext

    def front_bbox(self, pad: float = 0.1):
        """Bounding box of the front hemisphere (z >= 0), used for feature lines."""
        v = self.vertices[self.vertices[:, 2] >= 0.0]
        lo, hi = v.min(axis=0), v.max(axis=0)
        ext = hi - lo
        return lo - pad * ext, hi + pad * ext

    def jaw_quat(self, angle_rad) -> np.ndarray:
        return axis_angle_to_quat(self.jaw_axis, angle_rad)

    def reference(self) -> dict:
        return {"seed": self.seed, **asdict(self.config)}


def _uv_sphere(n_lat, n_lon):
    theta = np.pi * np.arange(1, n_lat) / n_lat  # polar angle from +y
    phi = 2 * np.pi * np.arange(n_lon) / n_lon  # azimuth, 0 at +z
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(th) * np.sin(ph), np.cos(th), np.sin(th) * np.cos(ph)], axis=-1).reshape(-1, 3)
    verts = np.concatenate([[[0.0, 1.0, 0.0]], ring, [[0.0, -1.0, 0.0]]])
    top, bottom = 0, len(verts) - 1

    def vid(i, j):
        return 1 + i * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((top, vid(0, j + 1), vid(0, j)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for j in range(n_lon):
        faces.append((bottom, vid(n_lat - 2, j), vid(n_lat - 2, j + 1)))
    return verts, np.asarray(faces, dtype=np.int64)


def _surface_point(verts, az_deg, el_deg):
    az, el = np.radians(az_deg), np.radians(el_deg)
    d = np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    u = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return verts[int(np.argmax(u @ d))]


def _bump(dist, radius):
    t = np.clip(1.0 - (dist / radius) ** 2, 0.0, None)
    return t * t


def _vertex_normals(verts, faces):
    n = np.zeros_like(verts)
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    for c in range(3):
        np.add.at(n, faces[:, c], fn)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def build_rig(config: RigConfig | None = None, seed: int = 0) -> SyntheticRig:
    """Deterministic synthetic head rig for ``(config, seed)``."""
    cfg = config or RigConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    unit, faces = _uv_sphere(cfg.n_lat, cfg.n_lon)
    v = unit * np.array([cfg.radius_x, cfg.radius_y, cfg.radius_z])
    # narrower lower face, slight chin protrusion
    low = np.clip(-v[:, 1] / cfg.radius_y, 0.0, 1.0)
    v[:, 0] *= 1.0 - cfg.chin_taper * low
    front = np.clip(v[:, 2] / cfg.radius_z, 0.0, 1.0)
    v[:, 2] += 0.04 * low * front ** 4
    # nose ridge
    nose = _bump(np.linalg.norm(v[:, :2] - np.array([0.0, -0.02]), axis=1), 0.1) * (front > 0.8)
    v[:, 2] += 0.06 * nose

    normals = _vertex_normals(v, faces)
    specs = list(_NAMED_SHAPES[: cfg.n_b])
    for i in range(len(specs), cfg.n_b):
        specs.append((f"extra_{i}", (rng.uniform(-50, 50), rng.uniform(-35, 35)), rng.uniform(0.08, 0.16),
                      rng.uniform(0.02, 0.05), "normal"))
    deltas = np.zeros((cfg.n_b, len(v), 3))
    support = np.zeros(len(v), dtype=bool)
    names = []
    for i, (name, (az, el), radius, amp, mode) in enumerate(specs):
        # seed-dependent jitter of anchors and amplitudes
        az = az + rng.uniform(-2.0, 2.0)
        el = el + rng.uniform(-2.0, 2.0)
        amp = amp * rng.uniform(0.9, 1.1)
        center = _surface_point(v, az, el)
        w = _bump(np.linalg.norm(v - center, axis=1), radius)
        if mode == "up":
            d = np.tile([0.0, 1.0, 0.0], (len(v), 1))
        elif mode == "down":
            d = np.tile([0.0, -1.0, 0.0], (len(v), 1))
        elif mode == "forward":
            d = np.tile([0.0, 0.0, 1.0], (len(v), 1))
        elif mode == "up_out":
            d = normals + np.array([0.0, 1.0, 0.0])
            d /= np.linalg.norm(d, axis=1, keepdims=True)
        else:
            d = normals
        deltas[i] = amp * w[:, None] * d
        support |= w > 0
        names.append(name)

    jaw_mask = (v[:, 1] < cfg.jaw_below) & (v[:, 2] > cfg.jaw_front)
    labels = np.full(len(v), LABEL_STATIC)
    labels[support] = LABEL_OTHER
    labels[jaw_mask] = LABEL_JAW
    for sx in (-1.0, 1.0):
        eye = _surface_point(v, np.degrees(np.arctan2(sx * cfg.eye_offset_x, cfg.radius_z)),
                             np.degrees(np.arcsin(cfg.eye_height / cfg.radius_y)))
        labels[np.linalg.norm(v - eye, axis=1) < cfg.eye_radius] = LABEL_EYE

    return SyntheticRig(
        vertices=v,
        faces=faces,
        deltas=deltas,
        jaw_mask=jaw_mask,
        jaw_pivot=np.array([0.0, cfg.jaw_pivot_y, cfg.jaw_pivot_z]),
        jaw_axis=np.array([1.0, 0.0, 0.0]),
        labels=labels,
        config=cfg,
        seed=int(seed),
        shape_names=tuple(names),
    )


def eval_rig(rig: SyntheticRig, beta, q_jaw=None) -> np.ndarray:
    """Deformed vertices: linear blendshapes, then the jaw rotation about the pivot."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != rig.n_b:
        raise DimensionMismatch(f"rig has {rig.n_b} blendshapes, got {beta.size} coefficients")
    v = rig.vertices + np.tensordot(beta, rig.deltas, axes=1)
    if q_jaw is not None:
        R = quat_to_rotmat(np.asarray(q_jaw, dtype=float))
        if not np.array_equal(R, np.eye(3)):
            m = rig.jaw_mask
            v[m] = (v[m] - rig.jaw_pivot) @ R.T + rig.jaw_pivot
    return v
