"""Independent reference computations used by several test modules."""

import itertools
import math

import numpy as np


def exhaustive_kmeans_min(x, k):
    """Global K-means minimum by enumerating every labeling of the rows."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    labels = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]          # (P, n, k)
    counts = onehot.sum(axis=1)                                            # (P, k)
    sums = np.einsum("pnk,nd->pkd", onehot.astype(np.float64), x)
    with np.errstate(invalid="ignore", divide="ignore"):
        between = np.where(counts > 0, (sums ** 2).sum(axis=2) / np.maximum(counts, 1), 0.0)
    inertia = (x ** 2).sum() - between.sum(axis=1)
    return float(max(inertia.min(), 0.0))


def brute_nearest(x, c):
    out = []
    for row in np.asarray(x, dtype=np.float64):
        best, arg = math.inf, -1
        for j, cen in enumerate(np.asarray(c, dtype=np.float64)):
            dist = sum((a - b) ** 2 for a, b in zip(row, cen))
            if dist < best:
                best, arg = dist, j
        out.append(arg)
    return np.array(out)


def scalar_attention(queries, w_q, w_k, w_v, x, mask):
    """Cross-attention with plain Python loops, no matrix library."""
    L, d = len(queries), len(queries[0])
    M = len(x)

    def mat_vec(w, v):
        return [sum(w[i][j] * v[j] for j in range(d)) for i in range(d)]

    q = [mat_vec(w_q, queries[i]) for i in range(L)]
    k = [mat_vec(w_k, x[m]) for m in range(M)]
    v = [mat_vec(w_v, x[m]) for m in range(M)]
    out = []
    for i in range(L):
        logits = [sum(q[i][t] * k[m][t] for t in range(d)) / math.sqrt(d) for m in range(M)]
        valid = [m for m in range(M) if mask[m]]
        top = max(logits[m] for m in valid)
        w = {m: math.exp(logits[m] - top) for m in valid}
        z = sum(w.values())
        out.append([sum(w[m] / z * v[m][t] for m in valid) for t in range(d)])
    return out


def lcs_brute(a, b):
    best = 0
    for r in range(1, len(a) + 1):
        for sub in itertools.combinations(a, r):
            it = iter(b)
            if all(tok in it for tok in sub):
                best = max(best, r)
    return best
