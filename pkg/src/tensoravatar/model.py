"""The trainable avatar bundle and its initialization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .avatar import SplatSet, bind_splats
from .blendmix import FeatureLineBank
from .config import ModelConfig
from .decoder import MlpParams, PosEncConfig, init_mlp
from .errors import ConfigInvalid
from .fields import Triplane
from .geometry import IDENTITY_QUAT, mesh_frames
from .synthrig.rig import SyntheticRig

GEO_OFFSET_DIM = 10  # d mu' (3), d q' (4), d log s' (3)


@dataclass
class AvatarModel:
    splats: SplatSet
    triplane: Triplane
    lines: FeatureLineBank
    color: MlpParams
    opacity: MlpParams
    rig: SyntheticRig
    config: ModelConfig
    _canonical: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        self.splats.validate(self.rig.n_faces)
        pe = self.posenc
        if self.color.dims[0] != self.triplane.n_features + pe.out_dim(3) or self.color.dims[-1] != 3:
            raise ValueError("colour decoder dims do not chain with the triplane and view encoding")
        if self.opacity.dims[0] != 6 * self.lines.n_d2:
            raise ValueError("opacity decoder input must be [l_b || l_r]")
        if self.lines.n_b > self.rig.n_b:
            raise ValueError("more expression lines than rig blendshapes")

    @property
    def posenc(self) -> PosEncConfig:
        return PosEncConfig(self.config.posenc_freq, self.config.posenc_include_input)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def canonical_frames(self):
        """Frames of the neutral rig mesh (cached; the rig is immutable)."""
        if self._canonical is None:
            self._canonical = mesh_frames(self.rig.vertices, self.rig.faces)
        return self._canonical

    def parameters(self) -> dict:
        """Trainable tensors by dotted name; the arrays are the live model storage."""
        params = {
            "splats.mu_local": self.splats.mu_local,
            "splats.quat_local": self.splats.quat_local,
            "splats.log_scale": self.splats.log_scale,
            "splats.opacity_logit": self.splats.opacity_logit,
            "triplane.xy": self.triplane.xy,
            "triplane.xz": self.triplane.xz,
            "triplane.yz": self.triplane.yz,
        }
        if self.config.use_lines:
            params["lines.expr"] = self.lines.expr
            params["lines.jaw"] = self.lines.jaw
            for k, v in self.opacity.tensors().items():
                params[f"opacity.{k}"] = v
        for k, v in self.color.tensors().items():
            params[f"color.{k}"] = v
        return params

    @staticmethod
    def group_of(name: str) -> str:
        head = name.split(".", 1)[0]
        return {"splats": "splat", "triplane": "grid", "lines": "grid"}.get(head, "mlp")


def init_model(rig: SyntheticRig, cfg: ModelConfig, jaw_quats=None, seed: int | None = None) -> AvatarModel:
    """Fresh model bound to ``rig``; ``jaw_quats`` are the jaw basis rotations (identity if omitted)."""
    cfg.validate()
    if cfg.n_b > rig.n_b:
        raise ConfigInvalid(f"model wants {cfg.n_b} blendshapes, rig has {rig.n_b}")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dtype = np.dtype(cfg.dtype)
    splats = bind_splats(rig, cfg.splats_per_face, cfg.init_scale, dtype=dtype)
    lo, hi = rig.bbox(cfg.bbox_pad)
    triplane = Triplane.random(cfg.triplane_res, cfg.triplane_c_xy, cfg.triplane_c_side, lo, hi, rng,
                               cfg.grid_init, dtype)
    if jaw_quats is None:
        jaw_quats = np.tile(IDENTITY_QUAT, (cfg.n_j, 1))
    jaw_quats = np.asarray(jaw_quats, dtype=float)
    flo, fhi = rig.front_bbox(cfg.bbox_pad)
    lines = FeatureLineBank.random(cfg.n_b, len(jaw_quats), cfg.line_res, cfg.line_dim, jaw_quats, flo, fhi, rng,
                                   cfg.grid_init, dtype)
    pe = PosEncConfig(cfg.posenc_freq, cfg.posenc_include_input)
    hidden = [cfg.hidden] * cfg.hidden_layers
    color = init_mlp([triplane.n_features + pe.out_dim(3)] + hidden + [3], "sigmoid", rng, dtype)
    out_dim = 1 if cfg.offset_target == "opacity" else GEO_OFFSET_DIM
    opacity = init_mlp([6 * cfg.line_dim] + hidden + [out_dim], "tanh", rng, dtype)
    return AvatarModel(splats, triplane, lines, color, opacity, rig, cfg)
