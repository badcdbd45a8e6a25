"""Mini-batch training with validation-AUC model selection."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import DatasetBundle
from .errors import ConfigError, NumericalError
from .infer import InferenceRule, ScoreSet, score_pairs
from .loss import LossConfig, total_loss
from .metrics import bias_sweep
from .model import ModelConfig, MustModel, score_all
from .numerics import AdamState, adam_step

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "l_pair", "l_state", "l_object", "val_auc", "val_hm")


@dataclass
class EpochRecord:
    epoch: int
    l_pair: float
    l_state: float
    l_object: float
    val_auc: float | None = None
    val_hm: float | None = None


@dataclass
class TrainResult:
    model: MustModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_auc: float | None = None


def build_model(bundle: DatasetBundle, model_cfg: ModelConfig) -> MustModel:
    """Model sized to the bundle (feature and word dims come from the data)."""
    cfg = replace(model_cfg, feat_dim=bundle.feat_dim, word_dim=bundle.word_dim)
    sv, ov = bundle.word_dicts()
    return MustModel(bundle.space, sv, ov, cfg)


def evaluate_split(model: MustModel, bundle: DatasetBundle, prefix: str, rule: InferenceRule, k: int = 1):
    X, st, ob = bundle.split(f"{prefix}_seen", f"{prefix}_unseen")
    scores = ScoreSet(*score_all(model, X))
    pair_scores = score_pairs(rule, scores, model.space)
    labels = model.space.pair_ids(st, ob)
    return bias_sweep(pair_scores, labels, model.space, k)


def _snapshot(model: MustModel) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.params}


def train(bundle: DatasetBundle, model_cfg: ModelConfig, loss_cfg: LossConfig,
          train_cfg: TrainConfig, rule: InferenceRule | None = None) -> TrainResult:
    """Train the three heads with Adam on the combined objective.

    Validation runs every ``eval_every`` epochs; the returned model holds the
    parameters with the best validation AUC seen so far. Training stops early
    after ``patience`` evaluations without improvement.
    """
    rule = rule or InferenceRule(train_cfg.inference)
    model = build_model(bundle, model_cfg)
    result = TrainResult(model)
    if train_cfg.epochs == 0:
        return result
    X, st, ob = bundle.split("train")
    if len(X) == 0:
        raise ConfigError("bundle has no train samples")
    has_val = bundle.has_split("val_seen") and bundle.has_split("val_unseen")
    if not has_val:
        raise ConfigError("bundle needs val_seen and val_unseen samples for model selection")

    rng = np.random.default_rng(train_cfg.seed)
    params = model.params
    adam = AdamState(lr=train_cfg.lr)
    best_state, stale = None, 0
    n = len(X)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for i in range(0, n, train_cfg.batch_size):
            idx = order[i:i + train_cfg.batch_size]
            model.zero_grad()
            br = total_loss(model, X[idx], st[idx], ob[idx], loss_cfg)
            if not np.isfinite(br.total):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {adam.step + 1}")
            adam_step(params, adam)
            sums += len(idx) * np.array([br.l_pair, br.l_state, br.l_object])
        rec = EpochRecord(epoch, *(sums / n))
        if epoch % train_cfg.eval_every == 0:
            rep = evaluate_split(model, bundle, "val", rule)
            rec.val_auc, rec.val_hm = rep.auc, rep.best_hm
            if result.best_val_auc is None or rep.auc > result.best_val_auc:
                result.best_val_auc, result.best_epoch = rep.auc, epoch
                best_state = _snapshot(model)
                stale = 0
            else:
                stale += 1
        result.history.append(rec)
        log.info("epoch %d pair %.4f state %.4f object %.4f val_auc %s",
                 epoch, rec.l_pair, rec.l_state, rec.l_object, rec.val_auc)
        if stale >= train_cfg.patience:
            log.info("early stop at epoch %d", epoch)
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_history(history: list[EpochRecord], path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, _fmt(r.l_pair), _fmt(r.l_state), _fmt(r.l_object), _fmt(r.val_auc), _fmt(r.val_hm)])
