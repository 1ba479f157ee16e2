"""Hyperparameters and their plain-text ``section.key = value`` representation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigInvalid
from .synthrig.rig import RigConfig


@dataclass(frozen=True)
class DataConfig:
    rig_seed: int = 0
    n_frames: int = 200
    n_cameras: int = 4
    image_size: int = 64
    seed: int = 1
    holdout_fraction: float = 0.2
    large_fraction: float = 0.2
    camera_distance: float = 2.4
    camera_arc_deg: float = 70.0
    focal_factor: float = 2.1  # focal length in units of image width
    max_jaw_deg: float = 20.0


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 0
    splats_per_face: int = 1
    init_scale: float = 0.5  # s' at binding, in triangle-scale units
    triplane_res: int = 64
    triplane_c_xy: int = 32
    triplane_c_side: int = 16
    line_res: int = 32
    line_dim: int = 16
    n_b: int = 8
    n_j: int = 16
    hidden: int = 128
    hidden_layers: int = 2
    posenc_freq: int = 4
    posenc_include_input: bool = True
    grid_init: float = 1e-4
    bbox_pad: float = 0.1
    use_lines: bool = True
    offset_target: str = "opacity"  # or "geometry"
    geo_offset_pos: float = 0.5
    geo_offset_rot: float = 0.3
    geo_offset_scale: float = 0.5
    cull: bool = True
    dtype: str = "float32"
    background: float = 0.0

    def validate(self):
        if self.offset_target not in ("opacity", "geometry"):
            raise ConfigInvalid(f"offset_target must be 'opacity' or 'geometry', got {self.offset_target!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigInvalid("dtype must be float32 or float64")
        if self.triplane_res < 2 or self.line_res < 2:
            raise ConfigInvalid("grid resolutions must be >= 2")
        if self.splats_per_face < 1 or self.n_b < 1 or self.n_j < 1 or self.hidden_layers < 1:
            raise ConfigInvalid("counts must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    seed: int = 0
    lr_grid: float = 2e-3
    lr_mlp: float = 1e-4
    lr_splat: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_dssim: float = 0.2
    lambda_pos: float = 0.01
    lambda_scale: float = 1.0
    lambda_op: float = 1.0
    tau_fraction: float = 0.02  # of the rig bbox diagonal
    eps_pos: float = 1.0
    eps_scale: float = 0.6
    n_clusters: int = 16
    balanced: bool = True
    eval_every: int = 0  # 0: only at the end
    eval_max_images: int = 0  # 0: whole held-out split
    parallel: bool = False

    def validate(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ConfigInvalid("lambda_dssim must lie in [0, 1]")
        for name in ("lambda_pos", "lambda_scale", "lambda_op", "tau_fraction", "lr_grid", "lr_mlp", "lr_splat"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        if self.iterations < 0 or self.n_clusters < 1:
            raise ConfigInvalid("iterations >= 0 and n_clusters >= 1 required")


@dataclass(frozen=True)
class Config:
    rig: RigConfig = field(default_factory=RigConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.rig.validate()
        self.model.validate()
        self.train.validate()
        if self.model.n_b > self.rig.n_b:
            raise ConfigInvalid(f"model uses {self.model.n_b} blendshapes but the rig has {self.rig.n_b}")
        return self

    def replace(self, **overrides) -> "Config":
        """``cfg.replace(**{"train.iterations": 10})`` style overrides."""
        parts = {s: getattr(self, s) for s in ("rig", "data", "model", "train")}
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in parts or not name:
                raise ConfigInvalid(f"unknown config key {key!r}")
            parts[section] = dataclasses.replace(parts[section], **{name: _coerce(parts[section], name, value)})
        return Config(**parts)

    def to_text(self) -> str:
        lines = []
        for section in ("rig", "data", "model", "train"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Config":
        overrides = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"line {n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            overrides[k] = v
        return cls().replace(**overrides).validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(obj, name, value):
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    if name not in types:
        raise ConfigInvalid(f"unknown key {name!r} for {type(obj).__name__}")
    if not isinstance(value, str):
        return value
    t = types[name]
    try:
        if t in ("bool", bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(value)
            return value.lower() in ("true", "1")
        if t in ("int", int):
            return int(value)
        if t in ("float", float):
            return float(value)
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {name}: {value!r}") from exc
    return value


def full_scale_model_config(**kw) -> ModelConfig:
    """Grid sizes and decoder widths reported for the full-scale model."""
    base = dict(triplane_res=128, triplane_c_xy=32, triplane_c_side=16, line_res=64, line_dim=32,
                n_b=80, n_j=16, hidden=128, hidden_layers=2)
    base.update(kw)
    return ModelConfig(**base)
