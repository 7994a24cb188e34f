"""Independent reference implementations used as test oracles.

Each function here is written from the algorithm's plain description, in
slow, literal Python, and shares no code with the package.
"""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction

import numpy as np


# -- run-length conversion ----------------------------------------------------

def scan_runs(bits, dt):
    """Literal while-loop: walk positions, count consecutive ones from each start."""
    D, E = [], []
    N = len(bits)
    k = 1
    while k <= N:
        if bits[k - 1] == 1:
            m = 0
            while k + m <= N and bits[k + m - 1] == 1:
                m += 1
            D.append(k * dt)
            E.append(m * dt)
            k += m
        else:
            k += 1
    return D, E


# -- drop model ----------------------------------------------------------------

def literal_step(k, n, probs, u):
    """probs: dict k -> p."""
    if u < probs[k]:
        return 1, max(1, min(k + 1, n))
    return 0, min(-1, max(k - 1, -n))


def literal_generate(n, probs, uniforms):
    k = -n
    out = []
    for u in uniforms:
        b, k = literal_step(k, n, probs, u)
        out.append(b)
    return out


def literal_estimate(bits, n):
    """Tally drops and visits per state walking from -n; unvisited states get the mean."""
    visits = {k: 0 for k in list(range(-n, 0)) + list(range(1, n + 1))}
    drops = dict(visits)
    k = -n
    for b in bits:
        visits[k] += 1
        if b:
            drops[k] += 1
            k = max(1, min(k + 1, n))
        else:
            k = min(-1, max(k - 1, -n))
    mean = sum(bits) / len(bits)
    return {s: (drops[s] / visits[s] if visits[s] else mean) for s in visits}


def fraction_stationary(n, probs):
    """Exact stationary drop rate of an irreducible chain via rational Gaussian elimination."""
    states = list(range(-n, 0)) + list(range(1, n + 1))
    idx = {s: i for i, s in enumerate(states)}
    m = len(states)
    P = [[Fraction(0)] * m for _ in range(m)]
    for s in states:
        p = Fraction(probs[s])
        P[idx[s]][idx[max(1, min(s + 1, n))]] += p
        P[idx[s]][idx[min(-1, max(s - 1, -n))]] += 1 - p
    # pi (P - I) = 0, sum pi = 1  ->  A x = b with A = (P - I)^T, last row replaced by ones
    A = [[P[j][i] - (1 if i == j else 0) for j in range(m)] for i in range(m)]
    A[-1] = [Fraction(1)] * m
    b = [Fraction(0)] * (m - 1) + [Fraction(1)]
    for c in range(m):
        piv = next(r for r in range(c, m) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        b[c], b[piv] = b[piv], b[c]
        for r in range(m):
            if r != c and A[r][c] != 0:
                f = A[r][c] / A[c][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
                b[r] -= f * b[c]
    pi = [b[i] / A[i][i] for i in range(m)]
    return sum(pi[idx[s]] * Fraction(probs[s]) for s in states)


def drop_rate_asymptotic_variance(n, probs):
    """Long-run variance of the drop indicator, so that SE = sqrt(var / N).

    Each emitted bit is 1 exactly when the chain lands in a drop state, so the
    bit stream is g(X_t) with g = [k > 0].  The variance follows from the
    fundamental matrix Z = (I - P + 1 pi)^-1 as sum_i pi_i g_i (2 (Z g)_i - g_i)
    with g centred.
    """
    states = list(range(-n, 0)) + list(range(1, n + 1))
    idx = {s: i for i, s in enumerate(states)}
    m = len(states)
    P = np.zeros((m, m))
    for s in states:
        P[idx[s], idx[max(1, min(s + 1, n))]] += probs[s]
        P[idx[s], idx[min(-1, max(s - 1, -n))]] += 1 - probs[s]
    w, vl = np.linalg.eig(P.T)
    pi = np.real(vl[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    g = np.array([1.0 if s > 0 else 0.0 for s in states])
    g -= pi @ g
    Z = np.linalg.inv(np.eye(m) - P + np.outer(np.ones(m), pi))
    return float(pi @ (g * (2 * (Z @ g) - g)))


# -- ChaCha20 (RFC 7539) ---------------------------------------------------------

def _rotl(v, c):
    return ((v << c) & 0xFFFFFFFF) | (v >> (32 - c))


def _qr(x, a, b, c, d):
    x[a] = (x[a] + x[b]) & 0xFFFFFFFF; x[d] = _rotl(x[d] ^ x[a], 16)
    x[c] = (x[c] + x[d]) & 0xFFFFFFFF; x[b] = _rotl(x[b] ^ x[c], 12)
    x[a] = (x[a] + x[b]) & 0xFFFFFFFF; x[d] = _rotl(x[d] ^ x[a], 8)
    x[c] = (x[c] + x[d]) & 0xFFFFFFFF; x[b] = _rotl(x[b] ^ x[c], 7)


def chacha20_block(key: bytes, counter: int, nonce: bytes) -> bytes:
    const = [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574]
    state = const + list(struct.unpack("<8I", key)) + [counter] + list(struct.unpack("<3I", nonce))
    x = list(state)
    for _ in range(10):
        _qr(x, 0, 4, 8, 12); _qr(x, 1, 5, 9, 13); _qr(x, 2, 6, 10, 14); _qr(x, 3, 7, 11, 15)
        _qr(x, 0, 5, 10, 15); _qr(x, 1, 6, 11, 12); _qr(x, 2, 7, 8, 13); _qr(x, 3, 4, 9, 14)
    return struct.pack("<16I", *((a + b) & 0xFFFFFFFF for a, b in zip(x, state)))


def keystream_bytes(seed: bytes, nbytes: int, start_block: int = 0) -> bytes:
    key = hashlib.sha256(seed).digest()
    out = b""
    blk = start_block
    while len(out) < nbytes:
        out += chacha20_block(key, blk, bytes(12))
        blk += 1
    return out[:nbytes]


# -- queueing --------------------------------------------------------------------

def md1k_loss(rho: float, K: int) -> float:
    """Blocking probability of M/D/1/K (K places including service) via the departure-epoch chain.

    a_j = P(j Poisson arrivals during one service) ; P_block = 1 - 1/(pi0 + rho).
    """
    a = [math.exp(-rho) * rho**j / math.factorial(j) for j in range(K + 1)]
    P = np.zeros((K, K))
    for i in range(K):
        base = max(i - 1, 0)
        for j in range(K):
            arrivals = j - base
            if arrivals < 0:
                continue
            if j < K - 1:
                P[i, j] = a[arrivals]
            else:
                P[i, j] = 1.0 - sum(a[: arrivals])
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    return 1.0 - 1.0 / (pi[0] + rho)


# -- detector / stats ------------------------------------------------------------

def brute_outliers(x, alpha, v):
    n = len(x)
    out = []
    for k in range(n):
        ok = True
        for h in range(max(0, k - v), min(n, k + v + 1)):
            if h != k and not alpha * x[k] > x[h]:
                ok = False
                break
        out.append(ok)
    return out


def literal_acf(bits, H):
    N = len(bits)
    mean = sum(bits) / N
    c = []
    for h in range(H + 1):
        s = 0.0
        for i in range(N - h):
            s += (bits[i] - mean) * (bits[i + h] - mean)
        c.append(s / (N - 1))
    return [ch / c[0] for ch in c]


def binomial_pmf(q, p):
    return [math.comb(q, k) * p**k * (1 - p) ** (q - k) for k in range(q + 1)]
