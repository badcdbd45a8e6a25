"""Component-imbalance re-weighted objectives and the focal baseline.

All losses are batch means. Each returns the scalar and gradients with
respect to the score matrices it read; ``total_loss`` pushes those through
the model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NumericalError, SplitViolation, UnknownComponent
from .numerics import log_softmax, log_softmax_backward
from .space import CompositionSpace, psi_batch


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0
    lam: float = 1.0
    temperature: float = 1.0
    weight_detached: bool = True
    clamp_weights: bool = True
    gamma_pair: float | None = None  # override for the composition term
    weight_components: bool = True  # False: plain CE for the state/object terms
    weight_pair: bool = True  # False: plain CE for the composition term
    pair_objective: str = "must"  # "must" or "focal"

    def __post_init__(self):
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"loss.{name} must be finite and >= 0, got {v}")
        if self.gamma_pair is not None and (not np.isfinite(self.gamma_pair) or self.gamma_pair < 0):
            raise ConfigError(f"loss.gamma_pair must be finite and >= 0, got {self.gamma_pair}")
        if not self.temperature > 0:
            raise ConfigError(f"loss.temperature must be positive, got {self.temperature}")
        if self.pair_objective not in ("must", "focal"):
            raise ConfigError(f"loss.pair_objective must be 'must' or 'focal', got {self.pair_objective!r}")

    @property
    def component_gamma(self) -> float:
        return self.gamma if self.weight_components else 0.0

    @property
    def composition_gamma(self) -> float:
        if not self.weight_pair:
            return 0.0
        return self.gamma if self.gamma_pair is None else self.gamma_pair

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    total: float
    l_pair: float
    l_state: float
    l_object: float
    w_state: np.ndarray  # per-sample weight on the state term (from object similarity)
    w_object: np.ndarray  # per-sample weight on the object term (from state similarity)
    mu: np.ndarray  # per-sample composition weight, already raised to gamma


def modulating_weight(d, gamma: float, clamp: bool = True):
    """(1 - d)**gamma, with d clipped to [0, 1] when ``clamp``.

    gamma == 0 gives exactly 1 everywhere, including d == 1.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(np.isnan(d)):
        raise NumericalError("NaN similarity passed to modulating_weight")
    base = 1.0 - (np.clip(d, 0.0, 1.0) if clamp else d)
    w = np.power(base, gamma)
    return w if w.ndim else float(w)


def modulating_weight_grad(d, gamma: float, clamp: bool = True) -> np.ndarray:
    """Derivative of ``modulating_weight`` with respect to d."""
    d = np.asarray(d, dtype=np.float64)
    if gamma == 0:
        return np.zeros_like(d)
    inside = (d > 0.0) & (d < 1.0) if clamp else d < 1.0
    base = np.where(inside, 1.0 - d, 1.0)
    return np.where(inside, -gamma * np.power(base, gamma - 1.0), 0.0)


def _check_labels(labels, n: int, kind: str, batch: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise UnknownComponent(f"{kind} labels must have shape ({batch},), got {labels.shape}")
    if batch and (labels.min() < 0 or labels.max() >= n):
        raise UnknownComponent(f"{kind} label out of range [0, {n})")
    return labels


def _weighted_ce(scores, labels, weights, temperature):
    """mean_i weights[i] * CE_i and its gradient wrt scores; also returns CE_i."""
    b = scores.shape[0]
    lsm = log_softmax(scores, temperature)
    rows = np.arange(b)
    ce = -lsm[rows, labels]
    loss = float(np.mean(weights * ce)) if b else 0.0
    dlsm = np.zeros_like(lsm)
    dlsm[rows, labels] = -weights / max(b, 1)
    return loss, log_softmax_backward(dlsm, lsm, temperature), ce


def _component_loss(D_main, D_other, main_labels, other_labels, gate, gamma, cfg, weights=None):
    b = D_main.shape[0]
    rows = np.arange(b)
    d_bar = gate * D_other[rows, other_labels]
    if weights is None:
        weights = modulating_weight(d_bar, gamma, cfg.clamp_weights) * np.ones(b)
    loss, dmain, ce = _weighted_ce(D_main, main_labels, weights, cfg.temperature)
    dother = np.zeros_like(D_other)
    if not cfg.weight_detached:
        dw = modulating_weight_grad(d_bar, gamma, cfg.clamp_weights)
        dother[rows, other_labels] = dw * gate * ce / max(b, 1)
    return loss, dmain, dother, weights


def loss_object(D_o, D_s, states, objects, space: CompositionSpace, cfg: LossConfig, weights=None):
    """Object cross-entropy weighted by (1 - psi * d_state_gt)**gamma.

    Returns (loss, dD_o, dD_s, weights). Passing ``weights`` freezes them.
    """
    b = D_o.shape[0]
    states = _check_labels(states, space.n_states, "state", b)
    objects = _check_labels(objects, space.n_objects, "object", b)
    gate = psi_batch(space, states, objects)
    return _component_loss(D_o, D_s, objects, states, gate, cfg.component_gamma, cfg, weights)


def loss_state(D_s, D_o, states, objects, space: CompositionSpace, cfg: LossConfig, weights=None):
    """Mirror of ``loss_object``. Returns (loss, dD_s, dD_o, weights)."""
    b = D_s.shape[0]
    states = _check_labels(states, space.n_states, "state", b)
    objects = _check_labels(objects, space.n_objects, "object", b)
    gate = psi_batch(space, states, objects)
    return _component_loss(D_s, D_o, states, objects, gate, cfg.component_gamma, cfg, weights)


def seen_pair_index(space: CompositionSpace, states, objects) -> np.ndarray:
    """Column of each (state, object) label among the seen pairs."""
    ids = []
    for s, o in zip(np.asarray(states).tolist(), np.asarray(objects).tolist()):
        pid = space.pair_id((s, o))
        if pid >= space.n_seen:
            raise SplitViolation(f"training label {space.pair_name((s, o))} is not a seen pair")
        ids.append(pid)
    return np.array(ids, dtype=np.int64)


def loss_composition(D_pair, D_s, D_o, states, objects, space: CompositionSpace, cfg: LossConfig, weights=None):
    """Pair cross-entropy over seen pairs weighted by mu**gamma.

    mu = (1 - d_state_gt)(1 - d_object_gt); with clamping each factor uses the
    clipped similarity. Returns (loss, dD_pair, dD_s, dD_o, weights).
    """
    b = D_pair.shape[0]
    states = _check_labels(states, space.n_states, "state", b)
    objects = _check_labels(objects, space.n_objects, "object", b)
    if D_pair.shape[1] != space.n_seen:
        raise UnknownComponent(f"pair scores must have {space.n_seen} seen columns, got {D_pair.shape[1]}")
    labels = seen_pair_index(space, states, objects)
    rows = np.arange(b)
    ds = D_s[rows, states]
    do = D_o[rows, objects]
    gamma = cfg.composition_gamma
    ws = modulating_weight(ds, gamma, cfg.clamp_weights) * np.ones(b)
    wo = modulating_weight(do, gamma, cfg.clamp_weights) * np.ones(b)
    if weights is None:
        weights = ws * wo
    loss, dpair, ce = _weighted_ce(D_pair, labels, weights, cfg.temperature)
    dDs = np.zeros_like(D_s)
    dDo = np.zeros_like(D_o)
    if not cfg.weight_detached:
        scale = ce / max(b, 1)
        dDs[rows, states] = modulating_weight_grad(ds, gamma, cfg.clamp_weights) * wo * scale
        dDo[rows, objects] = modulating_weight_grad(do, gamma, cfg.clamp_weights) * ws * scale
    return loss, dpair, dDs, dDo, weights


def focal_ce_baseline(logits, labels, gamma: float, temperature: float = 1.0):
    """Mean focal loss -(1 - p_t)**gamma * log p_t and its gradient wrt logits."""
    logits = np.asarray(logits, dtype=np.float64)
    b = logits.shape[0]
    labels = _check_labels(labels, logits.shape[1], "class", b)
    lsm = log_softmax(logits, temperature)
    rows = np.arange(b)
    logp = lsm[rows, labels]
    p = np.exp(logp)
    q = 1.0 - p
    mod = np.power(q, gamma)
    loss = float(np.mean(-mod * logp)) if b else 0.0
    # dL/dlogp_t = -(1-p)^g + g (1-p)^(g-1) p log p
    if gamma == 0:
        dlogp = -np.ones(b)
    else:
        safe_q = np.where(q > 0, q, 1.0)
        dlogp = np.where(q > 0, -mod + gamma * np.power(safe_q, gamma - 1.0) * p * logp, 0.0)
    dlsm = np.zeros_like(lsm)
    dlsm[rows, labels] = dlogp / max(b, 1)
    return loss, log_softmax_backward(dlsm, lsm, temperature)


def _pair_term(D_pair, D_s, D_o, states, objects, space, cfg, weights):
    if cfg.pair_objective == "focal":
        b = D_pair.shape[0]
        labels = seen_pair_index(space, states, objects)
        loss, dpair = focal_ce_baseline(D_pair, labels, cfg.composition_gamma, cfg.temperature)
        return loss, dpair, np.zeros_like(D_s), np.zeros_like(D_o), np.ones(b)
    return loss_composition(D_pair, D_s, D_o, states, objects, space, cfg, weights)


def combine_losses(D_s, D_o, D_pair, states, objects, space, cfg: LossConfig, fixed_weights=None):
    """Total objective on precomputed scores.

    Returns (LossBreakdown, dD_s, dD_o, dD_pair). ``fixed_weights`` is a
    (w_state, w_object, mu) triple that replaces the computed weights.
    """
    fw = fixed_weights or (None, None, None)
    l_o, dDo_o, dDs_o, w_obj = loss_object(D_o, D_s, states, objects, space, cfg, fw[1])
    l_s, dDs_s, dDo_s, w_st = loss_state(D_s, D_o, states, objects, space, cfg, fw[0])
    l_p, dDp, dDs_p, dDo_p, mu = _pair_term(D_pair, D_s, D_o, states, objects, space, cfg, fw[2])
    lam = cfg.lam
    total = l_p + lam * (l_s + l_o)
    dD_s = dDs_p + lam * (dDs_s + dDs_o)
    dD_o = dDo_p + lam * (dDo_s + dDo_o)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss (pair={l_p}, state={l_s}, object={l_o})")
    return LossBreakdown(total, l_p, l_s, l_o, w_st, w_obj, mu), dD_s, dD_o, dDp


def total_loss(model, X, states, objects, cfg: LossConfig, backward: bool = True, fixed_weights=None):
    """L = L_pair + lam * (L_state + L_object) with a single backward pass.

    Pair scores are computed over the seen pairs only.
    """
    space = model.space
    D_s, D_o, D_p, cache = model.forward(X, candidates=space.seen_ids)
    br, dD_s, dD_o, dD_p = combine_losses(D_s, D_o, D_p, states, objects, space, cfg, fixed_weights)
    if backward:
        model.backward(dD_s, dD_o, dD_p, cache)
    return br
