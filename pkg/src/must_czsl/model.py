"""Three embedding heads, label embedders and cosine score computation."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingEmbedding, ShapeError, UnknownComponent
from .numerics import (
    Param,
    cosine_rows,
    cosine_rows_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
)
from .space import CompositionSpace


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 512
    emb_dim: int = 512
    hidden_dim: int | None = None  # defaults to emb_dim
    word_dim: int = 300
    init_seed: int = 0

    @property
    def hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.emb_dim

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _make_linear(rng, name: str, n_in: int, n_out: int) -> tuple[Param, Param]:
    W = Param(f"{name}.W", _uniform_fan_in(rng, n_in, (n_in, n_out)))
    b_bound = 1.0 / np.sqrt(n_in)
    b = Param(f"{name}.b", rng.uniform(-b_bound, b_bound, size=n_out))
    return W, b


class MLP:
    """Linear -> ReLU -> Linear."""

    def __init__(self, rng, name: str, n_in: int, n_hidden: int, n_out: int):
        self.name = name
        self.W1, self.b1 = _make_linear(rng, f"{name}.fc1", n_in, n_hidden)
        self.W2, self.b2 = _make_linear(rng, f"{name}.fc2", n_hidden, n_out)

    @property
    def params(self) -> list[Param]:
        return [self.W1, self.b1, self.W2, self.b2]

    def forward(self, x):
        a, c1 = linear(x, self.W1, self.b1)
        r, mask = relu(a)
        y, c2 = linear(r, self.W2, self.b2)
        return y, (c1, mask, c2)

    def backward(self, dy, cache):
        c1, mask, c2 = cache
        dr = linear_backward(dy, c2)
        return linear_backward(relu_backward(dr, mask), c1)


# Embedding heads share the MLP shape.
EmbeddingHead = MLP


class LabelEmbedder:
    """Frozen word vectors followed by one trainable projection layer."""

    def __init__(self, rng, name: str, words: np.ndarray, out_dim: int):
        self.name = name
        self.words = np.asarray(words, dtype=np.float64)
        self.W, self.b = _make_linear(rng, f"{name}.proj", self.words.shape[1], out_dim)

    @property
    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, rows=None):
        x = self.words if rows is None else self.words[rows]
        return linear(x, self.W, self.b)

    def backward(self, dy, cache):
        linear_backward(dy, cache)


class PairEmbedder:
    """Composition embedder: MLP over the concatenation [w_state ; w_object].

    Anything exposing ``params``, ``forward(pairs)`` and ``backward`` can stand
    in (e.g. a graph-based embedder).
    """

    def __init__(self, rng, name: str, state_words, object_words, hidden: int, out_dim: int):
        self.name = name
        self.state_words = np.asarray(state_words, dtype=np.float64)
        self.object_words = np.asarray(object_words, dtype=np.float64)
        n_in = self.state_words.shape[1] + self.object_words.shape[1]
        self.mlp = MLP(rng, name, n_in, hidden, out_dim)

    @property
    def params(self) -> list[Param]:
        return self.mlp.params

    def inputs(self, states: np.ndarray, objects: np.ndarray) -> np.ndarray:
        return np.concatenate([self.state_words[states], self.object_words[objects]], axis=1)

    def forward(self, states, objects):
        return self.mlp.forward(self.inputs(states, objects))

    def backward(self, dy, cache):
        self.mlp.backward(dy, cache)


def hashed_word_vector(name: str, dim: int, salt: str = "") -> np.ndarray:
    """Deterministic unit vector seeded by a SHA-256 of the class name."""
    digest = hashlib.sha256(f"{salt}{name}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _word_matrix(names: Sequence[str], vectors: Mapping[str, np.ndarray], dim: int, kind: str):
    rows = []
    for n in names:
        v = vectors.get(n)
        if v is None:
            raise MissingEmbedding(f"no word vector for {kind} {n!r}")
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (dim,):
            raise ShapeError(f"word vector for {kind} {n!r} has shape {v.shape}, expected ({dim},)")
        if not np.all(np.isfinite(v)):
            raise MissingEmbedding(f"word vector for {kind} {n!r} is not finite")
        rows.append(v)
    return np.stack(rows) if rows else np.zeros((0, dim))


@dataclass
class ScoreCache:
    hs: tuple
    ho: tuple
    hp: tuple | None
    ps: tuple
    po: tuple
    pp: tuple | None
    cos_s: tuple
    cos_o: tuple
    cos_p: tuple | None


class MustModel:
    """Parameters of the three heads and the three label embedders."""

    def __init__(
        self,
        space: CompositionSpace,
        state_vectors: Mapping[str, np.ndarray],
        object_vectors: Mapping[str, np.ndarray],
        config: ModelConfig = ModelConfig(),
    ):
        self.space = space
        self.config = config
        ws = _word_matrix(space.state_names, state_vectors, config.word_dim, "state")
        wo = _word_matrix(space.object_names, object_vectors, config.word_dim, "object")
        rng = np.random.default_rng(config.init_seed)
        k, hid, d = config.emb_dim, config.hidden, config.feat_dim
        self.head_s = MLP(rng, "head_state", d, hid, k)
        self.head_o = MLP(rng, "head_object", d, hid, k)
        self.head_pair = MLP(rng, "head_pair", d, hid, k)
        self.embed_s = LabelEmbedder(rng, "embed_state", ws, k)
        self.embed_o = LabelEmbedder(rng, "embed_object", wo, k)
        self.embed_pair = PairEmbedder(rng, "embed_pair", ws, wo, hid, k)

    @property
    def modules(self):
        return [self.head_s, self.head_o, self.head_pair, self.embed_s, self.embed_o, self.embed_pair]

    @property
    def params(self) -> list[Param]:
        return [p for m in self.modules for p in m.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.params}

    def load_state_dict(self, values: Mapping[str, np.ndarray]) -> None:
        for p in self.params:
            if p.name not in values:
                raise KeyError(f"missing parameter {p.name}")
            v = np.asarray(values[p.name], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ShapeError(f"{p.name}: shape {v.shape} != {p.value.shape}")
            p.value[...] = v

    @property
    def word_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        return self.embed_s.words, self.embed_o.words

    def _check_features(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.feat_dim:
            raise ShapeError(f"features must be (b, {self.config.feat_dim}), got {X.shape}")
        return X

    def _candidate_components(self, candidates):
        cand = np.asarray(candidates, dtype=np.int64).reshape(-1)
        if cand.size and (cand.min() < 0 or cand.max() >= self.space.n_closed):
            raise UnknownComponent("candidate pair id out of range")
        return self.space.closed_states[cand], self.space.closed_objects[cand]

    # -- forward ------------------------------------------------------------

    def forward(self, X, candidates=None):
        """Return (D_s, D_o, D_pair, cache). D_pair is None without candidates."""
        X = self._check_features(X)
        h_s, c_hs = self.head_s.forward(X)
        h_o, c_ho = self.head_o.forward(X)
        P_s, c_ps = self.embed_s.forward()
        P_o, c_po = self.embed_o.forward()
        D_s, cos_s = cosine_rows(h_s, P_s)
        D_o, cos_o = cosine_rows(h_o, P_o)
        D_p = c_hp = c_pp = cos_p = None
        if candidates is not None:
            st, ob = self._candidate_components(candidates)
            h_p, c_hp = self.head_pair.forward(X)
            P_p, c_pp = self.embed_pair.forward(st, ob)
            D_p, cos_p = cosine_rows(h_p, P_p)
        cache = ScoreCache(c_hs, c_ho, c_hp, c_ps, c_po, c_pp, cos_s, cos_o, cos_p)
        return D_s, D_o, D_p, cache

    def backward(self, dD_s, dD_o, dD_p, cache: ScoreCache) -> None:
        dh, dP = cosine_rows_backward(dD_s, cache.cos_s)
        self.head_s.backward(dh, cache.hs)
        self.embed_s.backward(dP, cache.ps)
        dh, dP = cosine_rows_backward(dD_o, cache.cos_o)
        self.head_o.backward(dh, cache.ho)
        self.embed_o.backward(dP, cache.po)
        if dD_p is not None:
            dh, dP = cosine_rows_backward(dD_p, cache.cos_p)
            self.head_pair.backward(dh, cache.hp)
            self.embed_pair.backward(dP, cache.pp)

    # -- inference-facing helpers ------------------------------------------

    def state_prototypes(self) -> np.ndarray:
        return self.embed_s.forward()[0]

    def object_prototypes(self) -> np.ndarray:
        return self.embed_o.forward()[0]

    def pair_prototypes(self, candidates) -> np.ndarray:
        st, ob = self._candidate_components(candidates)
        return self.embed_pair.forward(st, ob)[0]


def component_scores(model: MustModel, X) -> tuple[np.ndarray, np.ndarray]:
    D_s, D_o, _, _ = model.forward(X)
    return D_s, D_o


def composition_scores(model: MustModel, X, candidates) -> np.ndarray:
    X = model._check_features(X)
    h_p, _ = model.head_pair.forward(X)
    return cosine_rows(h_p, model.pair_prototypes(candidates))[0]


def pair_prototype(model: MustModel, pair) -> np.ndarray:
    s, o = int(pair[0]), int(pair[1])
    model.space._check_state(s)
    model.space._check_object(o)
    return model.embed_pair.forward(np.array([s]), np.array([o]))[0][0]


def score_all(model: MustModel, X, batch_size: int = 1024):
    """Score features against every state, object and closed pair."""
    X = model._check_features(X)
    candidates = np.arange(model.space.n_closed)
    P_p = model.pair_prototypes(candidates)
    P_s = model.state_prototypes()
    P_o = model.object_prototypes()
    out_s, out_o, out_p = [], [], []
    for i in range(0, max(len(X), 1), batch_size):
        xb = X[i:i + batch_size]
        if len(xb) == 0:
            break
        out_s.append(cosine_rows(model.head_s.forward(xb)[0], P_s)[0])
        out_o.append(cosine_rows(model.head_o.forward(xb)[0], P_o)[0])
        out_p.append(cosine_rows(model.head_pair.forward(xb)[0], P_p)[0])
    if not out_s:
        sp = model.space
        return np.zeros((0, sp.n_states)), np.zeros((0, sp.n_objects)), np.zeros((0, sp.n_closed))
    return np.concatenate(out_s), np.concatenate(out_o), np.concatenate(out_p)
