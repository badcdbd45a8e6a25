import csv
from dataclasses import replace

import numpy as np
import pytest

from must_czsl.config import TrainConfig, resolve
from must_czsl.data import SynthConfig, synth_generate
from must_czsl.errors import ConfigError, NumericalError
from must_czsl.infer import InferenceRule
from must_czsl.loss import LossConfig
from must_czsl.train import build_model, evaluate_split, train, write_history

SMALL = SynthConfig(n_states=5, n_objects=4, n_seen=10, n_unseen=5, samples_per_pair=12, d_feat=16, word_dim=8)


@pytest.fixture(scope="module")
def synth_rc():
    return resolve(profile="synth")


@pytest.fixture(scope="module")
def small_bundle():
    return synth_generate(SMALL)


def _cfgs(rc, **train_kw):
    return replace(rc.model, emb_dim=16), rc.loss, replace(rc.train, **train_kw)


def test_zero_epochs_returns_initial_model(synth_rc, small_bundle):
    m, l, t = _cfgs(synth_rc, epochs=0)
    res = train(small_bundle, m, l, t)
    assert res.history == [] and res.best_epoch is None
    fresh = build_model(small_bundle, m)
    for p, q in zip(res.model.params, fresh.params):
        assert np.array_equal(p.value, q.value)


def test_training_is_deterministic(synth_rc, small_bundle, tmp_path):
    m, l, t = _cfgs(synth_rc, epochs=6, eval_every=2)
    a = train(small_bundle, m, l, t)
    b = train(small_bundle, m, l, t)
    write_history(a.history, tmp_path / "a.csv")
    write_history(b.history, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for p, q in zip(a.model.params, b.model.params):
        assert np.array_equal(p.value, q.value)
    c = train(small_bundle, m, l, replace(t, seed=1))
    assert [r.l_pair for r in c.history] != [r.l_pair for r in a.history]


def test_losses_decrease_on_desk_config(synth_rc):
    bundle = synth_generate(SynthConfig())
    res = train(bundle, synth_rc.model, synth_rc.loss, replace(synth_rc.train, epochs=30, eval_every=30))
    first, last = res.history[0], res.history[-1]
    assert len(res.history) == 30
    assert last.l_pair < first.l_pair
    assert last.l_state < first.l_state
    assert last.l_object < first.l_object


def test_selected_checkpoint_has_max_val_auc(synth_rc, small_bundle):
    m, l, t = _cfgs(synth_rc, epochs=12, eval_every=1)
    res = train(small_bundle, m, l, t)
    aucs = [r.val_auc for r in res.history if r.val_auc is not None]
    assert res.best_val_auc == max(aucs)
    assert res.history[res.best_epoch - 1].val_auc == res.best_val_auc
    assert evaluate_split(res.model, small_bundle, "val", InferenceRule("must")).auc == res.best_val_auc


def test_early_stopping(synth_rc, small_bundle):
    m, l, t = _cfgs(synth_rc, epochs=200, eval_every=1, patience=2, lr=1e-9)
    res = train(small_bundle, m, l, t)
    assert len(res.history) < 200
    assert len(res.history) - res.best_epoch == 2


def test_gamma_zero_is_the_plain_ce_base_model(synth_rc, small_bundle):
    m, _, t = _cfgs(synth_rc, epochs=3)
    a = train(small_bundle, m, LossConfig(gamma=0.0, lam=1.0, temperature=0.1), t)
    b = train(small_bundle, m, LossConfig(gamma=2.0, lam=1.0, temperature=0.1,
                                           weight_components=False, weight_pair=False), t)
    assert [(r.l_pair, r.l_state, r.l_object) for r in a.history] == [(r.l_pair, r.l_state, r.l_object) for r in b.history]


def test_non_finite_features_abort(synth_rc, small_bundle):
    feats = small_bundle.features.copy()
    feats[small_bundle.samples[0, 0], 0] = np.nan
    bad = replace(small_bundle, features=feats)
    m, l, t = _cfgs(synth_rc, epochs=1)
    with pytest.raises(NumericalError):
        train(bad, m, l, t)


def test_config_guards():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)


def test_history_csv(synth_rc, small_bundle, tmp_path):
    m, l, t = _cfgs(synth_rc, epochs=4, eval_every=2)
    res = train(small_bundle, m, l, t)
    write_history(res.history, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["epoch", "l_pair", "l_state", "l_object", "val_auc", "val_hm"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert rows[1][4] == "" and rows[2][4] != ""
