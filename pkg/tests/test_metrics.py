import numpy as np
import pytest

from must_czsl.errors import ProtocolError, ShapeError
from must_czsl.metrics import bias_sweep, component_accuracy, evaluate, harmonic_mean, topk_accuracy
from must_czsl.space import build_space

from conftest import brute_force_sweep, random_space


def tiny_instance(rng, grid=None):
    n_states, n_objects = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    n_pairs = min(n_states * n_objects, int(rng.integers(max(n_states, n_objects) + 1, 11)))
    n_seen = int(rng.integers(max(n_states, n_objects), n_pairs))
    space = random_space(rng, n_states, n_objects, n_seen, n_pairs - n_seen)
    b = int(rng.integers(4, 51))
    scores = rng.uniform(-1, 1, (b, space.n_closed))
    if grid:
        scores = np.round(scores * grid) / grid
    labels = rng.integers(0, space.n_closed, b)
    labels[0] = 0
    labels[1] = space.n_closed - 1
    return space, scores, labels


def test_harmonic_mean_units():
    assert harmonic_mean(0.30, 0.20) == 0.24
    assert harmonic_mean(0.5, 0.5) == 0.5
    assert harmonic_mean(0.7, 0.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


def test_six_sample_four_pair_hand_instance():
    space = build_space(["a", "b"], ["x", "y"], [(0, 0), (1, 1)], [(0, 1), (1, 0)])
    scores = np.array([
        [0.9, 0.1, 0.5, 0.2],
        [0.2, 0.4, 0.6, 0.0],
        [0.3, 0.8, 0.1, 0.7],
        [0.1, 0.2, 0.6, 0.3],
        [0.5, 0.4, 0.45, 0.9],
        [0.6, 0.2, 0.1, 0.3],
    ])
    labels = np.array([0, 1, 1, 2, 3, 2])
    rep = bias_sweep(scores, labels, space, 1)
    points, auc, hm = brute_force_sweep(scores, labels, space.unseen_column_mask, 1)
    assert [(p.seen_acc, p.unseen_acc) for p in rep.curve] == points
    assert abs(rep.auc - auc) < 1e-12 and abs(rep.best_hm - hm) < 1e-12


@pytest.mark.parametrize("k", [1, 2, 3])
def test_sweep_matches_brute_force(k):
    rng = np.random.default_rng(100 + k)
    done = 0
    while done < 25:
        grid = 4 if done % 3 == 0 else None  # some instances with heavy ties
        space, scores, labels = tiny_instance(rng, grid)
        if k > space.n_closed:
            continue
        rep = bias_sweep(scores, labels, space, k)
        points, auc, hm = brute_force_sweep(scores, labels, space.unseen_column_mask, k)
        got = [(p.seen_acc, p.unseen_acc) for p in rep.curve]
        assert len(got) == len(points)
        np.testing.assert_allclose(np.array(got), np.array(points), rtol=0, atol=1e-9)
        assert abs(rep.auc - auc) < 1e-9
        assert abs(rep.best_hm - hm) < 1e-9
        done += 1


def test_curve_properties_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(30):
        space, scores, labels = tiny_instance(rng)
        rep = bias_sweep(scores, labels, space, 1)
        a_s = np.array([p.seen_acc for p in rep.curve])
        a_u = np.array([p.unseen_acc for p in rep.curve])
        biases = np.array([p.bias for p in rep.curve])
        assert np.all(np.diff(biases) > 0)
        assert np.all(np.diff(a_u) >= 0) and np.all(np.diff(a_s) <= 0)
        assert 0 <= rep.auc <= 1
        assert rep.best_hm >= max(harmonic_mean(s, u) for s, u in zip(a_s, a_u)) - 1e-15
        assert rep.best_seen == a_s.max() and rep.best_unseen == a_u.max()
        # endpoints: -inf favours seen pairs, +inf favours unseen pairs
        assert biases[0] == -np.inf and biases[-1] == np.inf
        assert a_u[0] == 0.0 and a_s[-1] == 0.0
        # curve points agree with direct ranking at the operating bias
        s_acc, u_acc = topk_accuracy(scores, labels, space, 1, rep.operating_bias)
        assert harmonic_mean(s_acc, u_acc) == pytest.approx(rep.best_hm, abs=1e-12)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(8)
    for _ in range(20):
        space, scores, labels = tiny_instance(rng)
        a = bias_sweep(scores, labels, space, 1)
        b = bias_sweep(2 * scores + 1, labels, space, 1)
        assert abs(a.auc - b.auc) < 1e-12 and abs(a.best_hm - b.best_hm) < 1e-12


def test_perfect_scorer():
    rng = np.random.default_rng(9)
    space = random_space(rng, 3, 3, 5, 3)
    labels = np.repeat(np.arange(space.n_closed), 4)
    scores = rng.uniform(0, 0.1, (len(labels), space.n_closed))
    scores[np.arange(len(labels)), labels] = 1.0
    rep = bias_sweep(scores, labels, space, 1)
    assert rep.auc == 1.0 and rep.best_hm == 1.0
    assert topk_accuracy(scores, labels, space, 1, 0.0) == (1.0, 1.0)
    assert (rep.curve[0].seen_acc, rep.curve[0].unseen_acc) == (1.0, 0.0)
    assert (rep.curve[-1].seen_acc, rep.curve[-1].unseen_acc) == (0.0, 1.0)
    assert (rep.acc_adj, rep.acc_obj) == (1.0, 1.0)


def test_topk_nesting():
    rng = np.random.default_rng(10)
    space = random_space(rng, 4, 4, 8, 5)
    scores = rng.standard_normal((60, space.n_closed))
    labels = rng.integers(0, space.n_closed, 60)
    for bias in (-0.5, 0.0, 0.3):
        accs = [topk_accuracy(scores, labels, space, k, bias) for k in (1, 2, 3)]
        for lo, hi in zip(accs, accs[1:]):
            assert lo[0] <= hi[0] and lo[1] <= hi[1]
    reps = evaluate(scores, labels, space, 3)
    assert [r.k for r in reps] == [1, 2, 3]
    assert reps[0].auc <= reps[1].auc <= reps[2].auc


def test_component_accuracy():
    same = [(0, 1), (2, 2), (1, 0)]
    assert component_accuracy(same, same) == (1.0, 1.0)
    assert component_accuracy([(1, 1), (0, 2)], [(0, 1), (2, 2)]) == (0.0, 1.0)
    pred = [(0, 0), (1, 2), (2, 1), (3, 3), (0, 4)]
    true = [(0, 1), (1, 2), (1, 1), (3, 0), (2, 4)]
    # states match at 0, 1, 3 ; objects match at 1, 2, 4
    assert component_accuracy(pred, true) == (3 / 5, 3 / 5)
    with pytest.raises(ShapeError):
        component_accuracy(pred, true[:4])


def test_protocol_errors():
    space = build_space(["a", "b"], ["x", "y"], [(0, 0), (1, 1)], [(0, 1)])
    scores = np.zeros((3, 3))
    with pytest.raises(ProtocolError):
        bias_sweep(scores, [0, 1, 1], space)
    with pytest.raises(ProtocolError):
        bias_sweep(scores, [2, 2, 2], space)
    with pytest.raises(ShapeError):
        bias_sweep(np.zeros((3, 2)), [0, 1, 2], space)


def test_report_serialisation():
    rng = np.random.default_rng(11)
    space, scores, labels = tiny_instance(rng)
    d = bias_sweep(scores, labels, space).to_dict()
    assert d["curve"][0][0] == "-inf" and d["curve"][-1][0] == "inf"
    assert set(d) == {"k", "auc", "best_hm", "best_seen", "best_unseen", "acc_adj", "acc_obj",
                      "operating_bias", "curve"}
