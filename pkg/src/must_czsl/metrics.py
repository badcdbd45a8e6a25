"""Seen/unseen accuracy, harmonic mean, calibration-bias sweep and AUC.

The sweep adds a scalar bias to every unseen-pair column. For a fixed
sample, whether its label lands in the top-k is a step function of the bias
with a single breakpoint, so the whole seen/unseen accuracy curve is
determined by the sorted set of per-sample breakpoints. One curve point is
emitted per open interval between consecutive breakpoints, merging
neighbours with identical accuracies; the two outer intervals are reported
with bias -inf and +inf.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ShapeError
from .infer import predict_topk
from .space import CompositionSpace


@dataclass
class CurvePoint:
    bias: float
    seen_acc: float
    unseen_acc: float


@dataclass
class EvalReport:
    k: int
    auc: float
    best_hm: float
    best_seen: float
    best_unseen: float
    acc_adj: float
    acc_obj: float
    operating_bias: float
    curve: list[CurvePoint] = field(default_factory=list)

    def to_dict(self, with_curve: bool = True) -> dict:
        d = {
            "k": self.k,
            "auc": self.auc,
            "best_hm": self.best_hm,
            "best_seen": self.best_seen,
            "best_unseen": self.best_unseen,
            "acc_adj": self.acc_adj,
            "acc_obj": self.acc_obj,
            "operating_bias": _fmt_bias(self.operating_bias),
        }
        if with_curve:
            d["curve"] = [[_fmt_bias(p.bias), p.seen_acc, p.unseen_acc] for p in self.curve]
        return d


def _fmt_bias(b: float):
    if np.isinf(b):
        return "inf" if b > 0 else "-inf"
    return float(b)


def harmonic_mean(a_s: float, a_u: float) -> float:
    den = a_s + a_u
    return 0.0 if den == 0 else 2.0 * a_s * a_u / den


def component_accuracy(pred_pairs, true_pairs) -> tuple[float, float]:
    """Fraction of predictions with the right state, and with the right object."""
    pred = np.asarray(pred_pairs, dtype=np.int64).reshape(-1, 2)
    true = np.asarray(true_pairs, dtype=np.int64).reshape(-1, 2)
    if pred.shape != true.shape:
        raise ShapeError(f"{len(pred)} predictions vs {len(true)} labels")
    if len(pred) == 0:
        return 0.0, 0.0
    return float(np.mean(pred[:, 0] == true[:, 0])), float(np.mean(pred[:, 1] == true[:, 1]))


def correctness_thresholds(pair_scores: np.ndarray, labels: np.ndarray, unseen_cols: np.ndarray, k: int):
    """Per-sample breakpoint of top-k correctness as a function of the bias.

    A seen-labelled sample is correct iff bias < t; an unseen-labelled one iff
    bias > t. Returns (t, possible): samples whose label cannot reach the
    top-k at any bias have possible == False. t may be +-inf for samples that
    are correct at every finite bias.
    """
    b = pair_scores.shape[0]
    rows = np.arange(b)
    lab_scores = pair_scores[rows, labels]
    lab_unseen = unseen_cols[labels]
    cols = np.arange(pair_scores.shape[1])

    same_group = unseen_cols[None, :] == lab_unseen[:, None]
    beats = (pair_scores > lab_scores[:, None]) | (
        (pair_scores == lab_scores[:, None]) & (cols[None, :] < labels[:, None]))
    rank_in_group = np.sum(beats & same_group, axis=1)
    need = k - rank_in_group  # top-k slots left for rivals from the other group, plus one
    possible = need >= 1

    other = np.where(same_group, -np.inf, pair_scores)
    other_sorted = -np.sort(-other, axis=1)  # descending, -inf padding at the end
    n_other = np.sum(~same_group, axis=1)
    idx = np.clip(need - 1, 0, pair_scores.shape[1] - 1)
    kth = other_sorted[rows, idx]
    saturated = need > n_other  # fewer rivals than free slots

    t = np.where(lab_unseen, kth - lab_scores, lab_scores - kth)
    t = np.where(saturated, np.where(lab_unseen, -np.inf, np.inf), t)
    return t, possible


def _sample_groups(space: CompositionSpace, labels: np.ndarray):
    unseen_cols = space.unseen_column_mask
    is_unseen = unseen_cols[labels]
    if not np.any(is_unseen):
        raise ProtocolError("bias sweep needs at least one unseen-labelled sample")
    if np.all(is_unseen):
        raise ProtocolError("bias sweep needs at least one seen-labelled sample")
    return unseen_cols, is_unseen


def bias_sweep(pair_scores, labels, space: CompositionSpace, k: int = 1) -> EvalReport:
    """Full calibration-bias sweep for top-k accuracy.

    ``labels`` are closed pair ids; a sample counts as seen-labelled when its
    pair is a seen pair.
    """
    pair_scores = np.asarray(pair_scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if pair_scores.shape != (len(labels), space.n_closed):
        raise ShapeError(f"pair scores {pair_scores.shape} vs {len(labels)} labels x {space.n_closed} pairs")
    predict_topk(pair_scores[:1], k)  # validates k
    unseen_cols, is_unseen = _sample_groups(space, labels)
    t, possible = correctness_thresholds(pair_scores, labels, unseen_cols, k)
    n_seen = int(np.sum(~is_unseen))
    n_unseen = int(np.sum(is_unseen))

    t_seen = np.sort(t[possible & ~is_unseen])
    t_unseen = np.sort(t[possible & is_unseen])
    finite = t[possible & np.isfinite(t)]
    breaks = np.unique(finite)

    if breaks.size:
        lo = breaks[0] - (1.0 + abs(breaks[0]))
        hi = breaks[-1] + (1.0 + abs(breaks[-1]))
        probes = np.concatenate([[lo], 0.5 * (breaks[:-1] + breaks[1:]), [hi]])
        labels_b = np.concatenate([[-np.inf], probes[1:-1], [np.inf]])
    else:
        probes = np.array([0.0])
        labels_b = np.array([-np.inf])

    # seen correct iff probe < t ; unseen correct iff probe > t
    seen_correct = t_seen.size - np.searchsorted(t_seen, probes, side="right")
    unseen_correct = np.searchsorted(t_unseen, probes, side="left")
    a_s = seen_correct / n_seen
    a_u = unseen_correct / n_unseen
    # Breakpoints one ulp apart leave no interior point between them, and the
    # probe then repeats a neighbouring point. Drop repeats, keeping both ends.
    keep = [0]
    for i in range(1, len(probes)):
        if a_s[i] != a_s[keep[-1]] or a_u[i] != a_u[keep[-1]]:
            keep.append(i)
        elif i == len(probes) - 1:
            if len(keep) > 1:
                keep[-1] = i  # the +inf end replaces an identical interior point
            else:
                keep.append(i)
    probes, labels_b, a_s, a_u = probes[keep], labels_b[keep], a_s[keep], a_u[keep]

    curve = [CurvePoint(float(bb), float(s), float(u)) for bb, s, u in zip(labels_b, a_s, a_u)]
    hms = np.array([harmonic_mean(s, u) for s, u in zip(a_s, a_u)])
    best = int(np.argmax(hms))
    auc = float(np.trapezoid(a_s, a_u)) if len(a_s) > 1 else 0.0

    top1 = predict_topk(pair_scores, 1, float(probes[best]), space)[:, 0]
    pred_pairs = np.array([space.closed_pairs[p] for p in top1])
    true_pairs = np.array([space.closed_pairs[p] for p in labels])
    acc_adj, acc_obj = component_accuracy(pred_pairs, true_pairs)

    return EvalReport(
        k=k,
        auc=auc,
        best_hm=float(hms[best]),
        best_seen=float(a_s.max()),
        best_unseen=float(a_u.max()),
        acc_adj=acc_adj,
        acc_obj=acc_obj,
        operating_bias=float(probes[best]),
        curve=curve,
    )


def topk_accuracy(pair_scores, labels, space: CompositionSpace, k: int, bias: float = 0.0) -> tuple[float, float]:
    """(A^S, A^U) at one bias by direct ranking."""
    labels = np.asarray(labels, dtype=np.int64)
    top = predict_topk(pair_scores, k, bias, space)
    hit = np.any(top == labels[:, None], axis=1)
    unseen = space.unseen_column_mask[labels]
    a_s = float(hit[~unseen].mean()) if np.any(~unseen) else 0.0
    a_u = float(hit[unseen].mean()) if np.any(unseen) else 0.0
    return a_s, a_u


def evaluate(pair_scores, labels, space: CompositionSpace, topk: int = 1) -> list[EvalReport]:
    return [bias_sweep(pair_scores, labels, space, k) for k in range(1, topk + 1)]
