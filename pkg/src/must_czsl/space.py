"""Compositional label universe: states, objects and the closed pair set."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DuplicatePair, SplitOverlap, UnknownComponent

Pair = tuple[int, int]


@dataclass(frozen=True)
class CompositionSpace:
    """Immutable pair universe.

    Closed pair ids are dense: seen pairs first (declaration order), then
    unseen pairs. ``seen_mask`` is the dependency mask over all
    ``n_states * n_objects`` combinations, flattened as ``s * n_objects + o``.
    """

    state_names: tuple[str, ...]
    object_names: tuple[str, ...]
    seen_pairs: tuple[Pair, ...]
    unseen_pairs: tuple[Pair, ...]
    closed_pairs: tuple[Pair, ...] = field(init=False)
    _pair_to_id: dict = field(init=False, repr=False, compare=False)
    seen_mask: np.ndarray = field(init=False, repr=False, compare=False)
    unseen_column_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        closed = tuple(self.seen_pairs) + tuple(self.unseen_pairs)
        object.__setattr__(self, "closed_pairs", closed)
        for s, o in closed:
            self._check_state(s)
            self._check_object(o)
        index: dict[Pair, int] = {}
        seen_set = set(self.seen_pairs)
        for pid, pair in enumerate(closed):
            if pair in index:
                if pair in seen_set and pid >= len(self.seen_pairs):
                    raise SplitOverlap(f"pair {self.pair_name(pair)} is both seen and unseen")
                raise DuplicatePair(f"duplicate pair {self.pair_name(pair)}")
            index[pair] = pid
        object.__setattr__(self, "_pair_to_id", index)

        mask = np.zeros(self.n_states * self.n_objects, dtype=bool)
        for s, o in self.seen_pairs:
            mask[s * self.n_objects + o] = True
        mask.setflags(write=False)
        object.__setattr__(self, "seen_mask", mask)

        unseen_cols = np.zeros(len(closed), dtype=bool)
        unseen_cols[len(self.seen_pairs):] = True
        unseen_cols.setflags(write=False)
        object.__setattr__(self, "unseen_column_mask", unseen_cols)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_objects(self) -> int:
        return len(self.object_names)

    @property
    def n_seen(self) -> int:
        return len(self.seen_pairs)

    @property
    def n_closed(self) -> int:
        return len(self.closed_pairs)

    @property
    def seen_ids(self) -> np.ndarray:
        return np.arange(self.n_seen)

    def _check_state(self, s: int) -> None:
        if not (0 <= int(s) < self.n_states):
            raise UnknownComponent(f"state id {s} out of range [0, {self.n_states})")

    def _check_object(self, o: int) -> None:
        if not (0 <= int(o) < self.n_objects):
            raise UnknownComponent(f"object id {o} out of range [0, {self.n_objects})")

    def pair_name(self, pair: Pair) -> str:
        s, o = pair
        sn = self.state_names[s] if 0 <= s < self.n_states else f"<state {s}>"
        on = self.object_names[o] if 0 <= o < self.n_objects else f"<object {o}>"
        return f"({sn}, {on})"

    def pair_id(self, pair: Pair) -> int:
        try:
            return self._pair_to_id[(int(pair[0]), int(pair[1]))]
        except KeyError:
            raise UnknownComponent(f"pair {self.pair_name(pair)} is not in the closed set") from None

    def pair_ids(self, states: Sequence[int], objects: Sequence[int]) -> np.ndarray:
        return np.array([self.pair_id((s, o)) for s, o in zip(states, objects)], dtype=np.int64)

    def pair(self, pair_id: int) -> Pair:
        if not (0 <= int(pair_id) < self.n_closed):
            raise UnknownComponent(f"pair id {pair_id} out of range [0, {self.n_closed})")
        return self.closed_pairs[int(pair_id)]

    def is_seen(self, pair: Pair) -> bool:
        return psi(self, *pair) == 1

    @property
    def closed_states(self) -> np.ndarray:
        return np.array([s for s, _ in self.closed_pairs], dtype=np.int64)

    @property
    def closed_objects(self) -> np.ndarray:
        return np.array([o for _, o in self.closed_pairs], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "states": list(self.state_names),
            "objects": list(self.object_names),
            "seen": [[self.state_names[s], self.object_names[o]] for s, o in self.seen_pairs],
            "unseen": [[self.state_names[s], self.object_names[o]] for s, o in self.unseen_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompositionSpace":
        return build_space(d["states"], d["objects"], d["seen"], d["unseen"])

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _resolve(pair, state_idx: dict, object_idx: dict) -> Pair:
    s, o = pair
    if isinstance(s, str):
        if s not in state_idx:
            raise UnknownComponent(f"unknown state {s!r}")
        s = state_idx[s]
    if isinstance(o, str):
        if o not in object_idx:
            raise UnknownComponent(f"unknown object {o!r}")
        o = object_idx[o]
    return int(s), int(o)


def build_space(states, objects, seen, unseen) -> CompositionSpace:
    """Validate names and pairs and assign dense ids in input order.

    Pairs may reference components by name or by integer index.
    """
    states = tuple(str(s) for s in states)
    objects = tuple(str(o) for o in objects)
    if len(set(states)) != len(states):
        raise DuplicatePair("duplicate state name")
    if len(set(objects)) != len(objects):
        raise DuplicatePair("duplicate object name")
    s_idx = {n: i for i, n in enumerate(states)}
    o_idx = {n: i for i, n in enumerate(objects)}
    seen_t = tuple(_resolve(p, s_idx, o_idx) for p in seen)
    unseen_t = tuple(_resolve(p, s_idx, o_idx) for p in unseen)
    overlap = set(seen_t) & set(unseen_t)
    if overlap:
        p = sorted(overlap)[0]
        raise SplitOverlap(f"pair {p} appears in both seen and unseen")
    return CompositionSpace(states, objects, seen_t, unseen_t)


def psi(space: CompositionSpace, s: int, o: int) -> int:
    """1 iff (s, o) is a seen (training) pair."""
    space._check_state(s)
    space._check_object(o)
    return int(space.seen_mask[int(s) * space.n_objects + int(o)])


def psi_batch(space: CompositionSpace, states: np.ndarray, objects: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    objects = np.asarray(objects, dtype=np.int64)
    if states.size and (states.min() < 0 or states.max() >= space.n_states):
        raise UnknownComponent("state id out of range")
    if objects.size and (objects.min() < 0 or objects.max() >= space.n_objects):
        raise UnknownComponent("object id out of range")
    return space.seen_mask[states * space.n_objects + objects].astype(np.float64)


def psi_hat(space: CompositionSpace, component: tuple[str, int], pair: Pair) -> int:
    """Membership of a component in a pair.

    ``component`` is ``("state", id)`` or ``("object", id)``.
    """
    kind, idx = component
    s, o = pair
    space._check_state(s)
    space._check_object(o)
    if kind == "state":
        space._check_state(idx)
        return int(idx == s)
    if kind == "object":
        space._check_object(idx)
        return int(idx == o)
    raise UnknownComponent(f"component kind must be 'state' or 'object', got {kind!r}")
