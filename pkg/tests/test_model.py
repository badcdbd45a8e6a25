import numpy as np
import pytest

from must_czsl.errors import MissingEmbedding, ShapeError, UnknownComponent
from must_czsl.loss import LossConfig, total_loss
from must_czsl.model import (
    ModelConfig,
    MustModel,
    component_scores,
    composition_scores,
    hashed_word_vector,
    pair_prototype,
    score_all,
)
from must_czsl.numerics import finite_diff_check

from conftest import random_space


def make_model(seed=0, feat=6, emb=5, word=4, hidden=None, space=None):
    space = space or random_space(np.random.default_rng(seed))
    sv = {n: hashed_word_vector(n, word, "state:") for n in space.state_names}
    ov = {n: hashed_word_vector(n, word, "object:") for n in space.object_names}
    cfg = ModelConfig(feat_dim=feat, emb_dim=emb, word_dim=word, hidden_dim=hidden, init_seed=seed)
    return MustModel(space, sv, ov, cfg)


def naive_mlp(x, mlp):
    a = x @ mlp.W1.value + mlp.b1.value
    return np.maximum(a, 0.0) @ mlp.W2.value + mlp.b2.value


def naive_cos(u, v):
    return float(np.dot(u, v) / (np.sqrt(np.dot(u, u)) * np.sqrt(np.dot(v, v))))


def test_default_dims():
    cfg = ModelConfig()
    assert cfg.emb_dim == 512 and cfg.feat_dim == 512 and cfg.hidden == 512


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_component_scores_match_naive(seed):
    m = make_model(seed)
    X = np.random.default_rng(seed + 10).standard_normal((7, 6))
    D_s, D_o = component_scores(m, X)
    P_s = m.embed_s.words @ m.embed_s.W.value + m.embed_s.b.value
    P_o = m.embed_o.words @ m.embed_o.W.value + m.embed_o.b.value
    for i in range(len(X)):
        hs = naive_mlp(X[i:i + 1], m.head_s)[0]
        ho = naive_mlp(X[i:i + 1], m.head_o)[0]
        for s in range(m.space.n_states):
            assert abs(D_s[i, s] - naive_cos(hs, P_s[s])) < 1e-12
        for o in range(m.space.n_objects):
            assert abs(D_o[i, o] - naive_cos(ho, P_o[o])) < 1e-12
    assert np.all(np.abs(D_s) <= 1 + 1e-12) and np.all(np.abs(D_o) <= 1 + 1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composition_scores_match_naive(seed):
    m = make_model(seed)
    X = np.random.default_rng(seed + 20).standard_normal((5, 6))
    cand = np.arange(m.space.n_closed)
    D = composition_scores(m, X, cand)
    for i in range(len(X)):
        hp = naive_mlp(X[i:i + 1], m.head_pair)[0]
        for j, pid in enumerate(cand):
            s, o = m.space.pair(pid)
            w = np.concatenate([m.embed_s.words[s], m.embed_o.words[o]])[None]
            proto = naive_mlp(w, m.embed_pair.mlp)[0]
            assert abs(D[i, j] - naive_cos(hp, proto)) < 1e-12


def test_composition_candidates():
    m = make_model(1)
    X = np.random.default_rng(0).standard_normal((3, 6))
    one = composition_scores(m, X, [2])
    assert one.shape == (3, 1) and np.all(np.abs(one) <= 1)
    dup = composition_scores(m, X, [1, 1, 0])
    np.testing.assert_array_equal(dup[:, 0], dup[:, 1])
    with pytest.raises(UnknownComponent):
        composition_scores(m, X, [m.space.n_closed])


def test_basis_prototype_case():
    # k = |S|, prototypes = basis, h_s forced to e_j
    space = random_space(np.random.default_rng(0))
    k = space.n_states
    m = make_model(0, feat=k, emb=k, word=k, space=space)
    m.embed_s.words = np.eye(k)
    m.embed_s.W.value[...] = np.eye(k)
    m.embed_s.b.value[...] = 0.0
    j = 2
    m.head_s.W1.value[...] = np.eye(k)
    m.head_s.b1.value[...] = 0.0
    m.head_s.W2.value[...] = np.eye(k)
    m.head_s.b2.value[...] = 0.0
    D_s, _ = component_scores(m, np.eye(k)[j:j + 1])
    np.testing.assert_array_equal(D_s[0], np.eye(k)[j])


def test_prototype_scale_invariance():
    # with a bias-free projection, scaling a word row by c > 0 scales its prototype by c
    m = make_model(3)
    m.embed_s.b.value[...] = 0.0
    m.embed_o.b.value[...] = 0.0
    X = np.random.default_rng(1).standard_normal((4, 6))
    D_s, D_o = component_scores(m, X)
    rng = np.random.default_rng(9)
    m.embed_s.words = m.embed_s.words * rng.uniform(0.01, 50, m.space.n_states)[:, None]
    m.embed_o.words = m.embed_o.words * rng.uniform(0.01, 50, m.space.n_objects)[:, None]
    D_s2, D_o2 = component_scores(m, X)
    np.testing.assert_allclose(D_s2, D_s, rtol=0, atol=1e-14)
    np.testing.assert_allclose(D_o2, D_o, rtol=0, atol=1e-14)


def test_pair_prototype_deterministic_and_nonzero():
    m = make_model(2)
    p = m.space.closed_pairs[0]
    np.testing.assert_array_equal(pair_prototype(m, p), pair_prototype(m, p))
    space = random_space(np.random.default_rng(7))
    for seed in range(100):
        mm = make_model(seed, space=space, feat=4, emb=8, word=4)
        for pair in space.closed_pairs:
            assert np.linalg.norm(pair_prototype(mm, pair)) > 0


def test_missing_embedding():
    space = random_space(np.random.default_rng(0))
    sv = {n: np.ones(4) for n in space.state_names[1:]}
    ov = {n: np.ones(4) for n in space.object_names}
    with pytest.raises(MissingEmbedding):
        MustModel(space, sv, ov, ModelConfig(feat_dim=3, emb_dim=3, word_dim=4))
    sv = {n: np.ones(4) for n in space.state_names}
    sv[space.state_names[0]] = np.array([1.0, np.nan, 0, 0])
    with pytest.raises(MissingEmbedding):
        MustModel(space, sv, ov, ModelConfig(feat_dim=3, emb_dim=3, word_dim=4))


def test_feature_shape_checked():
    m = make_model(0)
    with pytest.raises(ShapeError):
        component_scores(m, np.zeros((2, 5)))


def test_forward_deterministic_and_score_all_consistent():
    m = make_model(4)
    X = np.random.default_rng(2).standard_normal((9, 6))
    a = score_all(m, X, batch_size=4)
    b = score_all(m, X)
    for u, v, w in zip(a, b, score_all(m, X)):
        np.testing.assert_array_equal(v, w)
        # BLAS blocking may differ with the row count: last-ulp differences only
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-15)
    D_s, D_o, D_p, _ = m.forward(X, np.arange(m.space.n_closed))
    np.testing.assert_array_equal(D_s, b[0])
    np.testing.assert_array_equal(D_p, b[2])


def test_init_is_seeded():
    a, b, c = make_model(0), make_model(0), make_model(1)
    for p, q in zip(a.params, b.params):
        np.testing.assert_array_equal(p.value, q.value)
    assert any(not np.array_equal(p.value, q.value) for p, q in zip(a.params, c.params))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_score_gradients(seed):
    # gradient of a random linear functional of all three score matrices
    m = make_model(seed, hidden=7)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((5, 6))
    cand = np.arange(m.space.n_closed)
    Rs = rng.standard_normal((5, m.space.n_states))
    Ro = rng.standard_normal((5, m.space.n_objects))
    Rp = rng.standard_normal((5, m.space.n_closed))

    def f(grad):
        D_s, D_o, D_p, cache = m.forward(X, cand)
        if grad:
            m.backward(Rs, Ro, Rp, cache)
        return float(np.sum(Rs * D_s) + np.sum(Ro * D_o) + np.sum(Rp * D_p))

    rep = finite_diff_check(f, m.params, tol=1e-4)
    assert rep.passed, rep.format()


def test_loss_uses_seen_candidates_only():
    m = make_model(0)
    X = np.random.default_rng(0).standard_normal((4, 6))
    st = np.array([p[0] for p in m.space.seen_pairs[:4]])
    ob = np.array([p[1] for p in m.space.seen_pairs[:4]])
    br = total_loss(m, X, st, ob, LossConfig(), backward=False)
    assert np.isfinite(br.total)
