"""Run-length Markov packet-drop model (extended Gilbert variant).

The model has ``2n`` states indexed by ``k in {-n..-1, 1..n}``.  A positive
state ``k`` means the last ``k`` events were drops, a negative state means the
last ``|k|`` events were non-drops; both saturate at ``n``.  Each state owns a
single drop probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = [
    "GilbertParams",
    "InvalidStateError",
    "EmptyInputError",
    "StationaryRate",
    "step",
    "generate",
    "sample",
    "estimate_params",
    "stationary_analysis",
    "stationary_drop_rate",
    "dumps_params",
    "loads_params",
]

DEFAULT_MEMORY = 4


class InvalidStateError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


def _state_keys(n: int) -> list[int]:
    return list(range(-n, 0)) + list(range(1, n + 1))


@dataclass(frozen=True)
class GilbertParams:
    """Drop probabilities for every run state, stored in ascending ``k`` order."""

    n: int
    probs: tuple[float, ...]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        probs = tuple(float(p) for p in self.probs)
        if len(probs) != 2 * self.n:
            raise ValueError(f"expected {2 * self.n} probabilities, got {len(probs)}")
        for k, p in zip(_state_keys(self.n), probs):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p[{k}]={p} outside [0, 1]")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_dict(cls, probs: Mapping[int, float]) -> "GilbertParams":
        if 0 in probs:
            raise ValueError("state 0 does not exist")
        n = max(abs(int(k)) for k in probs)
        missing = set(_state_keys(n)) - set(probs)
        if missing:
            raise ValueError(f"missing states {sorted(missing)}")
        return cls(n, tuple(probs[k] for k in _state_keys(n)))

    @classmethod
    def bernoulli(cls, p: float, n: int = 1) -> "GilbertParams":
        return cls(n, (p,) * (2 * n))

    @property
    def states(self) -> list[int]:
        return _state_keys(self.n)

    def index(self, k: int) -> int:
        if k == 0 or abs(k) > self.n:
            raise InvalidStateError(f"state {k} invalid for n={self.n}")
        return k + self.n if k < 0 else self.n + k - 1

    def __getitem__(self, k: int) -> float:
        return self.probs[self.index(k)]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.states, self.probs))

    def scaled(self, factor: float) -> "GilbertParams":
        return GilbertParams(self.n, tuple(min(1.0, p * factor) for p in self.probs))


def step(k: int, params: GilbertParams, u: float) -> tuple[int, int]:
    """Advance one event from state ``k`` using uniform draw ``u``.

    Returns ``(bit, next_state)``.
    """
    p = params[k]  # validates k
    n = params.n
    if u < p:
        return 1, max(1, min(k + 1, n))
    return 0, min(-1, max(k - 1, -n))


def _next_true(mask: np.ndarray) -> np.ndarray:
    # next_true[i] = smallest j >= i with mask[j], or len(mask)
    n = mask.size
    idx = np.where(mask, np.arange(n), n)
    return np.minimum.accumulate(idx[::-1])[::-1]


def generate(params: GilbertParams, uniforms, start: int | None = None) -> np.ndarray:
    """Emit one bit per uniform draw, starting from state ``-n`` by default.

    Bit-for-bit identical to folding :func:`step` over ``uniforms``; long runs
    in the two saturated states are skipped with precomputed next-hit indices
    so that sparse drop patterns cost O(number of runs) Python steps.
    """
    u = np.asarray(uniforms, dtype=np.float64)
    N = u.size
    n = params.n
    k = -n if start is None else start
    params.index(k)
    out = np.zeros(N, dtype=np.int8)
    if N == 0:
        return out

    p_lo, p_hi = params[-n], params[n]
    hit_lo = _next_true(u < p_lo)
    miss_hi = _next_true(u >= p_hi)
    uu = u.tolist()
    prob = params.as_dict()

    i = 0
    while i < N:
        if k == -n:
            j = int(hit_lo[i])
            if j >= N:
                break
            out[j] = 1
            k = max(1, min(k + 1, n))
            i = j + 1
        elif k == n:
            j = int(miss_hi[i])
            out[i:j] = 1
            if j >= N:
                break
            k = min(-1, max(k - 1, -n))
            i = j + 1
        else:
            if uu[i] < prob[k]:
                out[i] = 1
                k = max(1, min(k + 1, n))
            else:
                k = min(-1, max(k - 1, -n))
            i += 1
    return out


def sample(params: GilbertParams, size: int, rng: np.random.Generator) -> np.ndarray:
    return generate(params, rng.random(size))


def visited_states(bits, n: int) -> np.ndarray:
    """State occupied just before each event, walking from ``-n``."""
    b = np.asarray(bits, dtype=np.int8)
    N = b.size
    states = np.empty(N, dtype=np.int64)
    if N == 0:
        return states
    idx = np.arange(N)
    is_start = np.ones(N, dtype=bool)
    is_start[1:] = b[1:] != b[:-1]
    run_start = np.maximum.accumulate(np.where(is_start, idx, 0))
    run_len = idx - run_start + 1
    if b[0] == 0:
        # leading zeros continue the saturated initial state
        run_len[run_start == 0] += n
    r = np.minimum(run_len, n)
    states[0] = -n
    states[1:] = np.where(b[:-1] == 1, r[:-1], -r[:-1])
    return states


def estimate_params(training, n: int = DEFAULT_MEMORY) -> GilbertParams:
    """Maximum-likelihood drop probability per state from a 0/1 loss vector.

    States the walk never visits are assigned the vector's mean loss rate.
    """
    b = np.asarray(training, dtype=np.int8)
    if b.size == 0:
        raise EmptyInputError("training vector is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    states = visited_states(b, n)
    pos = np.where(states < 0, states + n, n + states - 1)
    visits = np.bincount(pos, minlength=2 * n)
    drops = np.bincount(pos, weights=b, minlength=2 * n)
    mean = float(b.mean())
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(visits > 0, drops / np.maximum(visits, 1), mean)
    return GilbertParams(n, tuple(float(x) for x in p))


def transition_matrix(params: GilbertParams) -> np.ndarray:
    n = params.n
    P = np.zeros((2 * n, 2 * n))
    for k, p in zip(params.states, params.probs):
        i = params.index(k)
        P[i, params.index(max(1, min(k + 1, n)))] += p
        P[i, params.index(min(-1, max(k - 1, -n)))] += 1.0 - p
    return P


@dataclass(frozen=True)
class StationaryRate:
    rate: float
    irreducible: bool
    recurrent_states: tuple[int, ...]


def _stationary(P: np.ndarray) -> np.ndarray:
    m = P.shape[0]
    A = np.vstack([P.T - np.eye(m), np.ones((1, m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_analysis(params: GilbertParams) -> StationaryRate:
    """Long-run drop rate of the chain started in state ``-n``.

    For irreducible chains this is the stationary drop probability.  When
    probabilities of exactly 0 or 1 make the chain reducible, the rate is the
    absorption-weighted rate over the closed classes reachable from ``-n`` and
    ``irreducible`` is False.
    """
    P = transition_matrix(params)
    m = P.shape[0]
    p = np.asarray(params.probs)
    adj = P > 0
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = labels == c
        if not adj[np.ix_(members, ~members)].any():
            closed.append(c)
    start = params.index(-params.n)

    # states reachable from the start
    reach = np.zeros(m, dtype=bool)
    reach[start] = True
    frontier = [start]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if not reach[j]:
                reach[j] = True
                frontier.append(j)

    closed = [c for c in closed if reach[labels == c].any()]
    class_rate = {}
    for c in closed:
        members = np.flatnonzero(labels == c)
        pi = _stationary(P[np.ix_(members, members)])
        class_rate[c] = float(pi @ p[members])

    if labels[start] in class_rate:
        weights = {labels[start]: 1.0}
    else:
        closed_mask = np.isin(labels, closed)
        T = np.flatnonzero(reach & ~closed_mask)
        Q = P[np.ix_(T, T)]
        absorb = np.linalg.solve(np.eye(T.size) - Q, np.eye(T.size))
        row = absorb[np.searchsorted(T, start)]
        weights = {}
        for c in closed:
            members = np.flatnonzero(labels == c)
            weights[c] = float(row @ P[np.ix_(T, members)].sum(axis=1))

    rate = sum(w * class_rate[c] for c, w in weights.items())
    recurrent = tuple(
        k for k in params.states if labels[params.index(k)] in class_rate and weights.get(labels[params.index(k)], 0) > 0
    )
    irreducible = ncomp == 1
    return StationaryRate(float(min(1.0, max(0.0, rate))), irreducible, recurrent)


def stationary_drop_rate(params: GilbertParams) -> float:
    return stationary_analysis(params).rate


def dumps_params(params: GilbertParams) -> str:
    lines = [f"n={params.n}"]
    # shortest exact round-trip, padded to at least 12 significant digits
    lines += [f"k={k} p={np.format_float_scientific(p, unique=True, min_digits=11)}"
              for k, p in zip(params.states, params.probs)]
    return "\n".join(lines) + "\n"


def loads_params(text: str | Iterable[str]) -> GilbertParams:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    lines = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("expected header line 'n=<int>'")
    n = int(lines[0][2:])
    probs = {}
    for ln in lines[1:]:
        fields = dict(part.split("=", 1) for part in ln.split())
        probs[int(fields["k"])] = float(fields["p"])
    params = GilbertParams.from_dict(probs)
    if params.n != n:
        raise ValueError(f"header says n={n} but states imply n={params.n}")
    return params
