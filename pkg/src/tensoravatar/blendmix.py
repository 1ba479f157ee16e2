"""Blending of per-blendshape and per-jaw-basis feature lines.

Mixing happens in line space: one weighted sum per frame yields a single
``(3, n_s, n_d2)`` triple that every splat then samples from.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeights, DimensionMismatch, InsufficientSamples
from .fields import FeatureLineTriple
from .geometry import IDENTITY_QUAT, quat_distance, quat_normalize


@dataclass
class FeatureLineBank:
    expr: np.ndarray  # (n_b, 3, n_s, n_d2)
    jaw: np.ndarray  # (n_j, 3, n_s, n_d2)
    jaw_quats: np.ndarray  # (n_j, 4)
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float)
        self.jaw_quats = np.asarray(self.jaw_quats, dtype=float)
        if self.expr.ndim != 4 or self.jaw.ndim != 4:
            raise ValueError("line stacks must be (n, 3, n_s, n_d2)")
        if self.expr.shape[1:] != self.jaw.shape[1:]:
            raise ValueError("expression and jaw lines must share (n_s, n_d2)")
        if self.expr.shape[0] < 1 or self.jaw.shape[0] < 1:
            raise ValueError("need at least one expression and one jaw line triple")
        if self.jaw_quats.shape != (self.jaw.shape[0], 4):
            raise ValueError("one jaw basis quaternion per jaw line triple")

    @property
    def n_b(self) -> int:
        return self.expr.shape[0]

    @property
    def n_j(self) -> int:
        return self.jaw.shape[0]

    @property
    def n_s(self) -> int:
        return self.expr.shape[2]

    @property
    def n_d2(self) -> int:
        return self.expr.shape[3]

    def triple(self, lines) -> FeatureLineTriple:
        return FeatureLineTriple(lines, self.bbox_min, self.bbox_max)

    @classmethod
    def random(cls, n_b, n_j, n_s, n_d2, jaw_quats, bbox_min, bbox_max, rng, scale=1e-4, dtype=np.float64):
        expr = rng.uniform(-scale, scale, size=(n_b, 3, n_s, n_d2)).astype(dtype)
        jaw = rng.uniform(-scale, scale, size=(n_j, 3, n_s, n_d2)).astype(dtype)
        return cls(expr, jaw, jaw_quats, bbox_min, bbox_max)


@dataclass
class ExpressionInput:
    """Tracked expression coefficients plus the jaw rotation of one frame."""

    beta: np.ndarray
    q_jaw: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        self.q_jaw = quat_normalize(self.q_jaw)
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.q_jaw))):
            raise ValueError("expression input must be finite")

    def truncated(self, n_b: int) -> "ExpressionInput":
        """Keep only the leading ``n_b`` coefficients."""
        if self.beta.size < n_b:
            raise DimensionMismatch(f"need {n_b} coefficients, got {self.beta.size}")
        return ExpressionInput(self.beta[:n_b], self.q_jaw)

    @classmethod
    def neutral(cls, n_b: int) -> "ExpressionInput":
        return cls(np.zeros(n_b))


def mix_expression_lines(bank: FeatureLineBank, beta) -> FeatureLineTriple:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != bank.n_b:
        raise DimensionMismatch(f"beta has {beta.size} entries, bank has {bank.n_b} blendshapes")
    return bank.triple(np.tensordot(beta.astype(bank.expr.dtype), bank.expr, axes=1))


def jaw_weights(q, quats) -> np.ndarray:
    """Normalized ``1 - d`` weights of ``q`` against each jaw basis quaternion.

    ``quats`` may be a :class:`FeatureLineBank` or an ``(n_j, 4)`` array.
    """
    if isinstance(quats, FeatureLineBank):
        quats = quats.jaw_quats
    sim = 1.0 - quat_distance(np.asarray(quats), np.asarray(q))
    total = sim.sum()
    if not total > 0:
        raise DegenerateWeights("query rotation is orthogonal to every jaw basis")
    return sim / total


def mix_jaw_lines(bank: FeatureLineBank, q) -> FeatureLineTriple:
    w = jaw_weights(q, bank.jaw_quats)
    return bank.triple(np.tensordot(w.astype(bank.jaw.dtype), bank.jaw, axes=1))


def jaw_basis_fps(quats, n_j: int) -> list[int]:
    """Greedy farthest-point selection of ``n_j`` jaw bases under ``quat_distance``.

    The seed is the rotation with the largest mean distance to all others;
    each further pick maximizes the distance to the nearest chosen basis.
    Ties resolve to the lowest index.
    """
    quats = np.asarray(quats, dtype=float)
    m = len(quats)
    if n_j < 1 or m < n_j:
        raise InsufficientSamples(f"cannot pick {n_j} bases from {m} rotations")
    dist = quat_distance(quats[:, None, :], quats[None, :, :])
    chosen = [int(np.argmax(dist.mean(axis=1)))]
    nearest = dist[chosen[0]].copy()
    taken = np.zeros(m, dtype=bool)
    taken[chosen[0]] = True
    while len(chosen) < n_j:
        cand = np.where(taken, -np.inf, nearest)
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        taken[nxt] = True
        nearest = np.minimum(nearest, dist[nxt])
    return chosen
