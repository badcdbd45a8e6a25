import numpy as np
import pytest

from must_czsl.errors import DuplicatePair, SplitOverlap, UnknownComponent
from must_czsl.space import build_space, psi, psi_batch, psi_hat

from conftest import random_space


def ut_zappos_shape():
    states = [f"st{i}" for i in range(16)]
    objects = [f"ob{i}" for i in range(12)]
    pairs = [(s, o) for s in range(16) for o in range(12)]
    rng = np.random.default_rng(3)
    order = rng.permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    return build_space(states, objects, pairs[:83], pairs[83:83 + 15 + 18])


def test_ut_zappos_shape():
    sp = ut_zappos_shape()
    assert (sp.n_states, sp.n_objects) == (16, 12)
    assert sp.n_seen == 83 and sp.n_closed == 116


def test_minimal_space():
    sp = build_space(["a"], ["b"], [(0, 0)], [])
    assert sp.n_closed == 1 and psi(sp, 0, 0) == 1


def test_errors():
    with pytest.raises(SplitOverlap):
        build_space(["a"], ["b"], [(0, 0)], [(0, 0)])
    with pytest.raises(DuplicatePair):
        build_space(["a"], ["b", "c"], [(0, 0), (0, 0)], [])
    with pytest.raises(DuplicatePair):
        build_space(["a"], ["b", "c"], [(0, 0)], [(0, 1), (0, 1)])
    with pytest.raises(UnknownComponent):
        build_space(["a"], ["b"], [("a", "zzz")], [])
    with pytest.raises(UnknownComponent):
        build_space(["a"], ["b"], [(0, 1)], [])


def test_names_and_ids_resolve_identically():
    a = build_space(["wet", "dry"], ["dog", "cat"], [("wet", "dog"), ("dry", "cat")], [("wet", "cat")])
    b = build_space(["wet", "dry"], ["dog", "cat"], [(0, 0), (1, 1)], [(0, 1)])
    assert a == b
    assert a.pair_id((0, 1)) == 2 and a.pair(2) == (0, 1)


def test_psi_exhaustive():
    sp = ut_zappos_shape()
    seen = set(sp.seen_pairs)
    for s in range(sp.n_states):
        for o in range(sp.n_objects):
            assert psi(sp, s, o) == int((s, o) in seen)
    for s, o in sp.unseen_pairs:
        assert psi(sp, s, o) == 0
    st = np.array([p[0] for p in sp.closed_pairs])
    ob = np.array([p[1] for p in sp.closed_pairs])
    np.testing.assert_array_equal(psi_batch(sp, st, ob), [1.0] * 83 + [0.0] * 33)
    with pytest.raises(UnknownComponent):
        psi(sp, 16, 0)
    with pytest.raises(UnknownComponent):
        psi(sp, 0, -1)


def test_psi_outside_closed_set_is_zero():
    sp = build_space(["a", "b"], ["x", "y"], [(0, 0), (1, 1)], [(0, 1)])
    assert psi(sp, 1, 0) == 0


def test_psi_hat_membership():
    sp = random_space(np.random.default_rng(0))
    for s, o in sp.closed_pairs:
        assert psi_hat(sp, ("state", s), (s, o)) == 1
        assert psi_hat(sp, ("object", o), (s, o)) == 1
        for s2 in range(sp.n_states):
            if s2 != s:
                assert psi_hat(sp, ("state", s2), (s, o)) == 0


def test_build_is_order_deterministic():
    rng = np.random.default_rng(5)
    a = random_space(rng)
    b = build_space(a.state_names, a.object_names, a.seen_pairs, a.unseen_pairs)
    assert a.closed_pairs == b.closed_pairs and a.digest() == b.digest()
    assert [a.pair_id(p) for p in a.closed_pairs] == list(range(a.n_closed))


def test_mask_is_read_only():
    sp = random_space(np.random.default_rng(1))
    with pytest.raises(ValueError):
        sp.seen_mask[0] = True


def test_dict_round_trip():
    sp = ut_zappos_shape()
    assert type(sp).from_dict(sp.to_dict()) == sp
