"""Composition prediction rules over component and pair similarities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .space import CompositionSpace

VARIANTS = ("must", "base", "max", "equal", "fixed")
OMEGA_EPS = 1e-9


@dataclass(frozen=True)
class ScoreSet:
    d_s: np.ndarray
    d_o: np.ndarray
    d_pair: np.ndarray

    def check(self, space: CompositionSpace) -> None:
        b = self.d_s.shape[0]
        if self.d_s.shape != (b, space.n_states):
            raise ShapeError(f"d_s shape {self.d_s.shape} != ({b}, {space.n_states})")
        if self.d_o.shape != (b, space.n_objects):
            raise ShapeError(f"d_o shape {self.d_o.shape} != ({b}, {space.n_objects})")
        if self.d_pair.shape != (b, space.n_closed):
            raise ShapeError(f"d_pair shape {self.d_pair.shape} != ({b}, {space.n_closed})")


@dataclass(frozen=True)
class InferenceRule:
    variant: str = "must"
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown inference variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "fixed":
            if self.alpha is None or self.beta is None:
                raise ConfigError("fixed inference requires both alpha and beta")
            if self.alpha < 0 or self.beta < 0:
                raise ConfigError("fixed inference requires alpha, beta >= 0")


def omega(scores: ScoreSet) -> np.ndarray:
    """Per-sample confidence ratio m_s / (m_s + m_o).

    m_s, m_o are the best state / object similarities with negatives clipped
    to 0. Falls back to 0.5 when both are (near) zero.
    """
    m_s = np.clip(scores.d_s.max(axis=1), 0.0, None)
    m_o = np.clip(scores.d_o.max(axis=1), 0.0, None)
    den = m_s + m_o
    degenerate = den < OMEGA_EPS
    return np.where(degenerate, 0.5, m_s / np.where(degenerate, 1.0, den))


def score_pairs(rule: InferenceRule, scores: ScoreSet, space: CompositionSpace, omega_override=None) -> np.ndarray:
    """Score every closed pair under ``rule``; returns (b, |C_closed|)."""
    scores.check(space)
    ds = scores.d_s[:, space.closed_states]
    do = scores.d_o[:, space.closed_objects]
    v = rule.variant
    if v == "base":
        return scores.d_pair.copy()
    if v == "must":
        w = omega(scores) if omega_override is None else np.broadcast_to(
            np.asarray(omega_override, dtype=np.float64), (ds.shape[0],))
        w = w[:, None]
        comp = w * ds + (1.0 - w) * do
    elif v == "max":
        comp = np.maximum(ds, do)
    elif v == "equal":
        comp = 0.5 * ds + 0.5 * do
    else:
        comp = rule.alpha * ds + rule.beta * do
    return comp + scores.d_pair


def apply_bias(pair_scores: np.ndarray, unseen_mask: np.ndarray, bias: float) -> np.ndarray:
    out = np.array(pair_scores, dtype=np.float64, copy=True)
    out[:, unseen_mask] += bias
    return out


def predict_topk(pair_scores, k: int = 1, bias: float = 0.0, space: CompositionSpace | None = None) -> np.ndarray:
    """Top-k closed pair ids per row after adding ``bias`` to unseen columns.

    Ties go to the lower pair id. Returns an int array of shape (b, k).
    """
    pair_scores = np.asarray(pair_scores, dtype=np.float64)
    n = pair_scores.shape[1]
    if k < 1 or k > n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    if space is not None and bias != 0.0:
        pair_scores = apply_bias(pair_scores, space.unseen_column_mask, bias)
    order = np.argsort(-pair_scores, axis=1, kind="stable")
    return order[:, :k]
