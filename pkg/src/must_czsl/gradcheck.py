"""Finite-difference check of the full training objective on a fresh model."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import resolve
from .data import SynthConfig, synth_generate
from .loss import total_loss
from .numerics import GradCheckReport, finite_diff_check
from .train import build_model


def check_full_objective(seed: int = 0, tol: float = 1e-4, attached: bool = False, batch: int = 16,
                         h: float = 1e-5, max_entries: int | None = 128) -> GradCheckReport:
    """Gradcheck every parameter of a randomly initialised desk-scale model.

    With detached weights the oracle differentiates the same objective: the
    per-sample weights are computed once at the unperturbed point and held
    fixed while probing.
    """
    rc = resolve(profile="synth", overrides={"loss": {"weight_detached": not attached}})
    bundle = synth_generate(SynthConfig(seed=seed))
    model = build_model(bundle, replace(rc.model, init_seed=seed))
    X, st, ob = bundle.split("train")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(X), size=batch, replace=False)
    X, st, ob = X[idx], st[idx], ob[idx]
    cfg = rc.loss

    fixed = None
    if cfg.weight_detached:
        br = total_loss(model, X, st, ob, cfg, backward=False)
        fixed = (br.w_state, br.w_object, br.mu)

    def loss_fn(with_grad: bool) -> float:
        return total_loss(model, X, st, ob, cfg, backward=with_grad, fixed_weights=fixed).total

    return finite_diff_check(loss_fn, model.params, h=h, tol=tol, max_entries=max_entries, seed=seed)
