"""Independent reference implementations used as test oracles.

Everything here is written separately from the package, in plain Python
loops or integer arithmetic, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import math
from decimal import Decimal
from itertools import combinations


def core_size_exact(p_text: str, dim: int) -> int:
    """max(1, floor(p*D/100)) in exact decimal arithmetic."""
    return max(1, int((Decimal(p_text) * dim / 100).to_integral_value(rounding="ROUND_FLOOR")))


def top_k_brute(mags, k: int) -> list[int]:
    order = sorted(range(len(mags)), key=lambda j: (-float(mags[j]), j))
    return sorted(order[:k])


def jaccard_sets(a: set, b: set) -> float:
    return len(a & b) / len(a | b)


def components_closure(n: int, edges: set[tuple[int, int]]) -> list[list[int]]:
    """Connected components via Warshall transitive closure."""
    reach = [[i == j or (i, j) in edges or (j, i) in edges for j in range(n)] for i in range(n)]
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    seen, comps = set(), []
    for i in range(n):
        if i in seen:
            continue
        comp = [j for j in range(n) if reach[i][j]]
        seen.update(comp)
        comps.append(comp)
    return comps


def threshold_edges(S, tau) -> set[tuple[int, int]]:
    n = len(S)
    return {(i, j) for i, j in combinations(range(n), 2) if S[i][j] >= tau}


# -- straight-line forward passes ---------------------------------------------


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def _matvec(M, v):
    return [_dot(row, v) for row in M]


def forward_linear(W, b, x):
    return [s + bi for s, bi in zip(_matvec(W, x), b)]


def forward_mlp1(W1, b1, W2, b2, x, activation="tanh"):
    z = [s + bi for s, bi in zip(_matvec(W1, x), b1)]
    a = [math.tanh(v) if activation == "tanh" else max(v, 0.0) for v in z]
    return [s + bi for s, bi in zip(_matvec(W2, a), b2)]


def forward_attn(U, q, Wk, Wv, Wo, bo, x):
    h = len(q)
    toks = [[x[j] * U[r][j] for r in range(h)] for j in range(len(x))]
    scores = [_dot(q, _matvec(Wk, t)) / math.sqrt(h) for t in toks]
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    tot = sum(e)
    z = [0.0] * h
    for w, t in zip(e, toks):
        v = _matvec(Wv, t)
        for r in range(h):
            z[r] += (w / tot) * v[r]
    return [s + bi for s, bi in zip(_matvec(Wo, z), bo)]


def mse(rows_pred, rows_true) -> float:
    tot, n = 0.0, 0
    for yp, yt in zip(rows_pred, rows_true):
        for a, b in zip(yp, yt):
            tot += (a - b) ** 2
            n += 1
    return tot / n


def cross_entropy(rows_logits, labels) -> float:
    tot = 0.0
    for logits, y in zip(rows_logits, labels):
        m = max(logits)
        lse = m + math.log(sum(math.exp(v - m) for v in logits))
        tot += lse - logits[y]
    return tot / len(labels)


# -- optimizer reference ----------------------------------------------------------


def adam_reference(theta, grads, trainable, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Per-coordinate Adam over a list of gradient vectors, frozen coords skipped."""
    theta = list(theta)
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads, start=1):
        for j in range(len(theta)):
            if not trainable[j]:
                continue
            m[j] = b1 * m[j] + (1 - b1) * g[j]
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j]
            mh = m[j] / (1 - b1**t)
            vh = v[j] / (1 - b2**t)
            theta[j] = theta[j] + (-lr * mh / (math.sqrt(vh) + eps))
    return theta, m, v
