"""Dense float64 ops with hand-written backward passes, plus Adam.

Tensors are plain ``numpy.ndarray``. Each differentiable op returns its
output and a cache; the matching ``*_backward`` takes the upstream gradient
and the cache and returns input gradients, accumulating into any ``Param``
it touched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateVector, NumericalError, ShapeError

DTYPE = np.float64
NORM_EPS = 1e-12


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    @property
    def shape(self):
        return self.value.shape


def _require_2d(x: np.ndarray, what: str) -> None:
    if x.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {x.shape}")


# -- linear -----------------------------------------------------------------

def linear(x: np.ndarray, W: Param, b: Param):
    _require_2d(x, "linear input")
    if W.value.ndim != 2 or x.shape[1] != W.value.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with W {W.value.shape}")
    if b.value.shape != (W.value.shape[1],):
        raise ShapeError(f"linear: bias {b.value.shape} does not match W {W.value.shape}")
    y = x @ W.value + b.value
    return y, (x, W, b)


def linear_backward(dy: np.ndarray, cache) -> np.ndarray:
    x, W, b = cache
    W.grad += x.T @ dy
    b.grad += dy.sum(axis=0)
    return dy @ W.value.T


# -- relu -------------------------------------------------------------------

def relu(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(mask, dy, 0.0)


# -- cosine similarity ------------------------------------------------------

def _unit_rows(X: np.ndarray, what: str):
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    if norms.size and norms.min() < NORM_EPS:
        i = int(np.argmin(norms))
        raise DegenerateVector(f"{what} row {i} has norm {norms[i]:.3g}")
    return X / norms[:, None], norms


def cosine_rows(H: np.ndarray, P: np.ndarray):
    """Pairwise cosine similarity: out[i, j] = cos(H[i], P[j])."""
    _require_2d(H, "cosine H")
    _require_2d(P, "cosine P")
    if H.shape[1] != P.shape[1]:
        raise ShapeError(f"cosine: H {H.shape} and P {P.shape} differ in width")
    Hn, hn = _unit_rows(H, "embedding")
    Pn, pn = _unit_rows(P, "prototype")
    out = Hn @ Pn.T
    return out, (Hn, hn, Pn, pn)


def cosine_rows_backward(dout: np.ndarray, cache):
    Hn, hn, Pn, pn = cache
    dHn = dout @ Pn
    dPn = dout.T @ Hn
    dH = (dHn - Hn * np.einsum("ij,ij->i", dHn, Hn)[:, None]) / hn[:, None]
    dP = (dPn - Pn * np.einsum("ij,ij->i", dPn, Pn)[:, None]) / pn[:, None]
    return dH, dP


# -- log-softmax ------------------------------------------------------------

def log_softmax(scores: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = scores / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax_backward(dout: np.ndarray, out: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    p = np.exp(out)
    return (dout - p * dout.sum(axis=-1, keepdims=True)) / temperature


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState) -> None:
    """One in-place Adam update; grads are zeroed afterwards.

    Raises NumericalError (before touching any value) if a grad is not finite.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


# -- finite differences -----------------------------------------------------

@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    checked: int
    total: int
    passed: bool
    refined: int = 0


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def format(self) -> str:
        lines = [f"{'parameter':<28} {'max rel err':>12} {'checked':>9} {'refined':>7}  status"]
        for r in self.rows:
            lines.append(
                f"{r.name:<28} {r.max_rel_err:12.3e} {r.checked:>4}/{r.total:<4} {r.refined:>7}  "
                f"{'ok' if r.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def _central(loss_fn, flat: np.ndarray, i: int, h: float) -> float:
    orig = flat[i]
    flat[i] = orig + h
    fp = loss_fn(False)
    flat[i] = orig - h
    fm = loss_fn(False)
    flat[i] = orig
    return (fp - fm) / (2.0 * h)


def finite_diff_check(
    loss_fn: Callable[[bool], float],
    params: Sequence[Param],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    refine: int = 2,
) -> GradCheckReport:
    """Compare analytic grads with central differences.

    ``loss_fn(True)`` must return the loss and leave analytic gradients in
    each ``Param.grad``; ``loss_fn(False)`` returns the loss only. The
    relative error of a parameter is ``max|a - n| / max(max|a|, max|n|)``
    over its checked entries (0 when both are identically zero). When
    ``max_entries`` is set, a seeded subset of entries is checked.

    Entries that miss ``tol`` at step ``h`` are re-probed at ``h/10``, then
    ``h/100`` (``refine`` levels) and keep the closest estimate. A probe that
    straddles a ReLU kink converges once the step is small enough; a wrong
    analytic gradient does not.
    """
    if not h > 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    if tol < 0:
        raise ConfigError(f"tolerance must be non-negative, got {tol}")
    for p in params:
        p.zero_grad()
    loss_fn(True)
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    rows = []
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        a = analytic[p.name].reshape(-1)[idx]
        numeric = np.array([_central(loss_fn, flat, i, h) for i in idx])
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        refined = 0
        if scale > 0.0:
            for j in np.flatnonzero(~(np.abs(a - numeric) / scale < tol)):
                refined += 1
                step = h
                for _ in range(refine):
                    step /= 10.0
                    cand = _central(loss_fn, flat, idx[j], step)
                    if abs(a[j] - cand) < abs(a[j] - numeric[j]):
                        numeric[j] = cand
            scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        err = 0.0 if scale == 0.0 else float(np.abs(a - numeric).max() / scale)
        rows.append(GradCheckRow(p.name, err, int(idx.size), int(n), err < tol, refined))
    for p in params:
        p.zero_grad()
    return GradCheckReport(rows, tol)
