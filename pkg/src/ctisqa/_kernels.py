"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``CTISQA_DISABLE_NUMBA`` is
unset (or falsy). Both paths are importable directly as ``*_nb`` / ``*_np``
so tests and the benchmark can compare them.

Distances are always accumulated in float64, whatever the input dtype.

Large problems (``n * k * d >= GEMM_MIN_WORK``) get their point-to-centroid
distances from the BLAS expansion ``|x|^2 - 2 x.c + |c|^2``. Rows whose best
and second-best centroids are within ``TIE_RTOL`` of each other are
re-assigned with the exact kernel, and the reported minimum distances are
always recomputed directly, so labels and inertia stay exact.
"""

import os

import numpy as np

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
else:
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        # skip the TBB probe; older system TBB builds only produce a warning
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_FALSY = ("", "0", "false", "no", "off")
USE_NUMBA = numba is not None and os.environ.get("CTISQA_DISABLE_NUMBA", "").strip().lower() in _FALSY
BACKEND = "numba" if USE_NUMBA else "numpy"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# rows per block in the numpy fallback; bounds the float64 temporaries
_CHUNK = 1024

GEMM_MIN_WORK = 1 << 22
TIE_RTOL = 1e-9
_GEMM_ROWS = 2048


def set_threads(n):
    """Set the numba worker-thread count (no-op on the numpy path)."""
    if USE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# numpy reference path


def sq_dist_to_point_np(x, c):
    c = np.asarray(c, dtype=np.float64)
    out = np.empty(x.shape[0], dtype=np.float64)
    for s in range(0, x.shape[0], _CHUNK):
        diff = x[s:s + _CHUNK].astype(np.float64) - c
        out[s:s + _CHUNK] = np.einsum("ij,ij->i", diff, diff)
    return out


def assign_nearest_np(x, centroids):
    centroids = np.asarray(centroids, dtype=np.float64)
    n, k = x.shape[0], centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind = np.empty(n, dtype=np.float64)
    for s in range(0, n, _CHUNK):
        block = x[s:s + _CHUNK].astype(np.float64)
        d2 = np.empty((block.shape[0], k))
        for j in range(k):
            diff = block - centroids[j]
            d2[:, j] = np.einsum("ij,ij->i", diff, diff)
        # argmin returns the first minimum, i.e. the lowest centroid index on ties
        lab = np.argmin(d2, axis=1)
        labels[s:s + _CHUNK] = lab
        mind[s:s + _CHUNK] = d2[np.arange(block.shape[0]), lab]
    return labels, mind


def cluster_sums_np(x, labels, k):
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    # one masked reduction per cluster; far faster than np.add.at
    for j in np.flatnonzero(counts):
        sums[j] = x[labels == j].sum(axis=0, dtype=np.float64)
    return sums, counts


def hartigan_pass_np(x, labels, centroids, counts, margin):
    """One sweep of single-point transfers; returns the number of moves.

    ``labels``, ``centroids`` and ``counts`` are updated in place.
    """
    k = centroids.shape[0]
    moves = 0
    for i in range(x.shape[0]):
        a = labels[i]
        if counts[a] <= 1:
            continue
        xi = x[i].astype(np.float64)
        diff = xi - centroids
        dist = np.einsum("ij,ij->i", diff, diff)
        cost_out = counts[a] / (counts[a] - 1.0) * dist[a]
        cost_in = counts / (counts + 1.0) * dist
        cost_in[a] = np.inf
        b = int(np.argmin(cost_in))
        if k > 1 and cost_in[b] < cost_out * (1.0 - margin):
            centroids[a] = (centroids[a] * counts[a] - xi) / (counts[a] - 1)
            centroids[b] = (centroids[b] * counts[b] + xi) / (counts[b] + 1)
            counts[a] -= 1
            counts[b] += 1
            labels[i] = b
            moves += 1
    return moves


def _as_uint8(buf):
    if isinstance(buf, (bytes, bytearray, memoryview)):
        return np.frombuffer(buf, dtype=np.uint8)
    return np.ascontiguousarray(buf, dtype=np.uint8).ravel()


_FNV_BLOCK = 1 << 22
_fnv_powers = None


def _prime_powers():
    # entry i is PRIME ** (_FNV_BLOCK - i) mod 2^64
    global _fnv_powers
    if _fnv_powers is None:
        up = np.cumprod(np.full(_FNV_BLOCK, FNV_PRIME, dtype=np.uint64), dtype=np.uint64)
        _fnv_powers = up[::-1].copy()
    return _fnv_powers


def _low_byte_states(b, s0):
    """Low byte of the hash state before each input byte.

    The prime is odd, so bit j of the next state is bit j of the current
    state XOR a function of bits below j. Each bit plane is therefore a
    prefix XOR once the planes below it are known.
    """
    n = b.size
    s = np.zeros(n, dtype=np.uint8)
    u = np.empty(n, dtype=np.uint8)
    p_low = np.uint8(FNV_PRIME & 0xFF)
    for j in range(8):
        # bit j of the product only sees bits <= j of s ^ b, and s has none above j yet
        np.bitwise_xor(s, b, out=u)
        np.multiply(u, p_low, out=u)
        np.bitwise_and(u, np.uint8(1 << j), out=u)
        plane = _exclusive_prefix_xor(u, (s0 >> j) & 1)
        np.left_shift(plane, np.uint8(j), out=plane)
        s |= plane
    return s


def _exclusive_prefix_xor(flags, first):
    """``out[i] = first ^ xor(flags[:i] != 0)`` as a 0/1 uint8 array."""
    n = flags.size
    words = -(-(n + 1) // 64)
    packed = np.zeros(words * 8, dtype=np.uint8)
    # shift by one position so the inclusive scan below becomes exclusive
    bits = np.zeros(words * 64, dtype=np.uint8)
    bits[0] = first
    bits[1:n + 1] = flags[:n]
    packed[:] = np.packbits(bits != 0, bitorder="little")
    w = packed.view("<u8").copy()
    for sh in (1, 2, 4, 8, 16, 32):
        w ^= w << np.uint64(sh)
    carry = np.zeros(words, dtype=np.uint64)
    carry[1:] = np.bitwise_xor.accumulate(w[:-1] >> np.uint64(63))
    w ^= np.uint64(0) - carry
    return np.unpackbits(w.view(np.uint8), count=n, bitorder="little")


def fnv1a64_np(buf):
    """FNV-1a 64 without a per-byte Python loop.

    With s the low byte of the state, ``(h ^ b) == h + ((s ^ b) - s)``, so
    after the low-byte sequence is known the hash of a block of length C is
    ``h * P^C + sum_i delta_i * P^(C - i)`` in wrapping 64-bit arithmetic.
    """
    data = _as_uint8(buf)
    h = FNV_OFFSET
    if data.size == 0:
        return h
    powers = _prime_powers()
    for start in range(0, data.size, _FNV_BLOCK):
        b = data[start:start + _FNV_BLOCK]
        s = _low_byte_states(b, h & 0xFF)
        pw = powers[_FNV_BLOCK - b.size:]
        # integer dot products wrap modulo 2^64, which is the arithmetic we want
        tail = int(np.dot((s ^ b).astype(np.uint64), pw)) - int(np.dot(s.astype(np.uint64), pw))
        h = (h * pow(FNV_PRIME, b.size, 1 << 64) + tail) & _MASK64
    return h


def hartigan_block_np(xb, labels, centroids, counts, margin, dist):
    """Hartigan sweep over one block given approximate distances ``dist``.

    Centroids that moved inside the block are re-measured exactly, and each
    move is confirmed with exact distances before it is applied.
    """
    k = centroids.shape[0]
    dirty = np.zeros(k, dtype=bool)
    moves = 0
    for i in range(xb.shape[0]):
        a = labels[i]
        if counts[a] <= 1:
            continue
        xi = xb[i]
        row = dist[i].copy()
        if dirty.any():
            diff = xi - centroids[dirty]
            row[dirty] = np.einsum("ij,ij->i", diff, diff)
        cost_in = counts / (counts + 1.0) * row
        cost_in[a] = np.inf
        b = int(np.argmin(cost_in))
        if not cost_in[b] < counts[a] / (counts[a] - 1.0) * row[a] * (1.0 - margin):
            continue
        da = xi - centroids[a]
        db = xi - centroids[b]
        ea = float(da @ da)
        eb = float(db @ db)
        if counts[b] / (counts[b] + 1.0) * eb < counts[a] / (counts[a] - 1.0) * ea * (1.0 - margin):
            centroids[a] = (centroids[a] * counts[a] - xi) / (counts[a] - 1)
            centroids[b] = (centroids[b] * counts[b] + xi) / (counts[b] + 1)
            counts[a] -= 1
            counts[b] += 1
            labels[i] = b
            dirty[a] = dirty[b] = True
            moves += 1
    return moves


def use_gemm(n, k, d):
    return k > 1 and n * k * d >= GEMM_MIN_WORK


def _gemm_sq_dists(xb, xxb, c, cc):
    out = xb @ c.T
    out *= -2.0
    out += xxb[:, None]
    out += cc
    np.maximum(out, 0.0, out=out)
    return out


def row_norms(x):
    """Squared row norms in float64."""
    out = np.empty(x.shape[0])
    for s in range(0, x.shape[0], _GEMM_ROWS):
        xb = np.asarray(x[s:s + _GEMM_ROWS], dtype=np.float64)
        out[s:s + _GEMM_ROWS] = np.einsum("ij,ij->i", xb, xb)
    return out


def _norms_block(x, xx, s):
    xb = np.ascontiguousarray(x[s:s + _GEMM_ROWS], dtype=np.float64)
    xxb = np.einsum("ij,ij->i", xb, xb) if xx is None else xx[s:s + _GEMM_ROWS]
    return xb, xxb


def sq_dists_gemm(x, points, xx=None):
    """Approximate ``(n, p)`` squared distances via BLAS; used for seeding."""
    p = np.ascontiguousarray(points, dtype=np.float64)
    pp = np.einsum("ij,ij->i", p, p)
    out = np.empty((x.shape[0], p.shape[0]))
    for s in range(0, x.shape[0], _GEMM_ROWS):
        xb, xxb = _norms_block(x, xx, s)
        out[s:s + _GEMM_ROWS] = _gemm_sq_dists(xb, xxb, p, pp)
    return out


def assign_nearest_gemm(x, centroids, exact, xx=None):
    c = np.ascontiguousarray(centroids, dtype=np.float64)
    cc = np.einsum("ij,ij->i", c, c)
    n, k = x.shape[0], c.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind = np.empty(n, dtype=np.float64)
    for s in range(0, n, _GEMM_ROWS):
        xb, xxb = _norms_block(x, xx, s)
        d2 = _gemm_sq_dists(xb, xxb, c, cc)
        lab = np.argmin(d2, axis=1)
        two = np.partition(d2, 1, axis=1)
        unsure = (two[:, 1] - two[:, 0]) <= TIE_RTOL * (xxb + cc.max())
        if unsure.any():
            lab[unsure] = exact(np.ascontiguousarray(xb[unsure]), c)[0]
        diff = xb - c[lab]
        labels[s:s + _GEMM_ROWS] = lab
        mind[s:s + _GEMM_ROWS] = np.einsum("ij,ij->i", diff, diff)
    return labels, mind


def hartigan_pass_gemm(x, labels, centroids, counts, margin, block, xx=None):
    moves = 0
    for s in range(0, x.shape[0], _GEMM_ROWS):
        xb, xxb = _norms_block(x, xx, s)
        cc = np.einsum("ij,ij->i", centroids, centroids)
        dist = _gemm_sq_dists(xb, xxb, centroids, cc)
        moves += block(xb, labels[s:s + _GEMM_ROWS], centroids, counts, margin, dist)
    return moves


# ---------------------------------------------------------------------------
# numba path

if numba is not None:

    @njit(cache=True, inline="always")
    def _row_sq_dist(x, i, c, j):
        # four fixed lanes: vectorizable, and the order never depends on threads
        d = x.shape[1]
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        t = 0
        while t + 4 <= d:
            a0 = np.float64(x[i, t]) - c[j, t]
            a1 = np.float64(x[i, t + 1]) - c[j, t + 1]
            a2 = np.float64(x[i, t + 2]) - c[j, t + 2]
            a3 = np.float64(x[i, t + 3]) - c[j, t + 3]
            s0 += a0 * a0
            s1 += a1 * a1
            s2 += a2 * a2
            s3 += a3 * a3
            t += 4
        while t < d:
            a0 = np.float64(x[i, t]) - c[j, t]
            s0 += a0 * a0
            t += 1
        return (s0 + s1) + (s2 + s3)

    @njit(cache=True, parallel=True)
    def _sq_dist_to_point_nb(x, c2):
        n = x.shape[0]
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            out[i] = _row_sq_dist(x, i, c2, 0)
        return out

    @njit(cache=True, parallel=True)
    def _assign_nearest_nb(x, centroids):
        n = x.shape[0]
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        mind = np.empty(n, dtype=np.float64)
        for i in prange(n):
            best = np.inf
            arg = 0
            for j in range(k):
                s = _row_sq_dist(x, i, centroids, j)
                if s < best:
                    best = s
                    arg = j
            labels[i] = arg
            mind[i] = best
        return labels, mind

    @njit(cache=True)
    def _cluster_sums_nb(x, labels, k):
        n, d = x.shape
        sums = np.zeros((k, d), dtype=np.float64)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            j = labels[i]
            counts[j] += 1
            for t in range(d):
                sums[j, t] += x[i, t]
        return sums, counts

    @njit(cache=True)
    def _hartigan_pass_nb(x, labels, centroids, counts, margin):
        n, d = x.shape
        k = centroids.shape[0]
        moves = 0
        for i in range(n):
            a = labels[i]
            if counts[a] <= 1:
                continue
            cost_out = counts[a] / (counts[a] - 1.0) * _row_sq_dist(x, i, centroids, a)
            best = np.inf
            b = -1
            for j in range(k):
                if j == a:
                    continue
                c = counts[j] / (counts[j] + 1.0) * _row_sq_dist(x, i, centroids, j)
                if c < best:
                    best = c
                    b = j
            if b >= 0 and best < cost_out * (1.0 - margin):
                na = counts[a]
                nb = counts[b]
                for t in range(d):
                    v = np.float64(x[i, t])
                    centroids[a, t] = (centroids[a, t] * na - v) / (na - 1)
                    centroids[b, t] = (centroids[b, t] * nb + v) / (nb + 1)
                counts[a] = na - 1
                counts[b] = nb + 1
                labels[i] = b
                moves += 1
        return moves

    @njit(cache=True)
    def _exact_row(xb, i, centroids, j):
        d = xb.shape[1]
        s = 0.0
        for t in range(d):
            a = xb[i, t] - centroids[j, t]
            s += a * a
        return s

    @njit(cache=True)
    def _hartigan_block_nb(xb, labels, centroids, counts, margin, dist):
        n, d = xb.shape
        k = centroids.shape[0]
        dirty = np.zeros(k, dtype=np.bool_)
        any_dirty = False
        moves = 0
        row = np.empty(k)
        for i in range(n):
            a = labels[i]
            if counts[a] <= 1:
                continue
            for j in range(k):
                if any_dirty and dirty[j]:
                    row[j] = _exact_row(xb, i, centroids, j)
                else:
                    row[j] = dist[i, j]
            best = np.inf
            b = -1
            for j in range(k):
                if j == a:
                    continue
                c = counts[j] / (counts[j] + 1.0) * row[j]
                if c < best:
                    best = c
                    b = j
            if b < 0 or not best < counts[a] / (counts[a] - 1.0) * row[a] * (1.0 - margin):
                continue
            ea = _exact_row(xb, i, centroids, a)
            eb = _exact_row(xb, i, centroids, b)
            if counts[b] / (counts[b] + 1.0) * eb < counts[a] / (counts[a] - 1.0) * ea * (1.0 - margin):
                na = counts[a]
                nb = counts[b]
                for t in range(d):
                    v = xb[i, t]
                    centroids[a, t] = (centroids[a, t] * na - v) / (na - 1)
                    centroids[b, t] = (centroids[b, t] * nb + v) / (nb + 1)
                counts[a] = na - 1
                counts[b] = nb + 1
                labels[i] = b
                dirty[a] = True
                dirty[b] = True
                any_dirty = True
                moves += 1
        return moves

    @njit(cache=True)
    def _fnv1a64_nb(buf):
        h = np.uint64(FNV_OFFSET)
        p = np.uint64(FNV_PRIME)
        for i in range(buf.shape[0]):
            h = (h ^ np.uint64(buf[i])) * p
        return h

    def sq_dist_to_point_nb(x, c):
        c2 = np.ascontiguousarray(np.asarray(c, dtype=np.float64).reshape(1, -1))
        return _sq_dist_to_point_nb(np.ascontiguousarray(x), c2)

    def assign_nearest_nb(x, centroids):
        return _assign_nearest_nb(np.ascontiguousarray(x),
                                  np.ascontiguousarray(centroids, dtype=np.float64))

    def cluster_sums_nb(x, labels, k):
        return _cluster_sums_nb(np.ascontiguousarray(x),
                                np.ascontiguousarray(labels, dtype=np.int64), int(k))

    def hartigan_pass_nb(x, labels, centroids, counts, margin):
        return int(_hartigan_pass_nb(x, labels, centroids, counts, float(margin)))

    def hartigan_block_nb(xb, labels, centroids, counts, margin, dist):
        return int(_hartigan_block_nb(xb, labels, centroids, counts, float(margin), dist))

    def fnv1a64_nb(buf):
        if isinstance(buf, (bytes, bytearray, memoryview)):
            arr = np.frombuffer(buf, dtype=np.uint8)
        else:
            arr = np.ascontiguousarray(buf, dtype=np.uint8)
        return int(_fnv1a64_nb(arr))


if USE_NUMBA:
    sq_dist_to_point = sq_dist_to_point_nb
    assign_exact = assign_nearest_nb
    cluster_sums = cluster_sums_nb
    hartigan_exact = hartigan_pass_nb
    hartigan_block = hartigan_block_nb
    fnv1a64 = fnv1a64_nb
else:
    sq_dist_to_point = sq_dist_to_point_np
    assign_exact = assign_nearest_np
    cluster_sums = cluster_sums_np
    hartigan_exact = hartigan_pass_np
    hartigan_block = hartigan_block_np
    fnv1a64 = fnv1a64_np


def assign_nearest(x, centroids, xx=None):
    """Nearest centroid per row and its squared distance; ties to the lowest index.

    ``xx`` optionally supplies precomputed squared row norms of ``x``.
    """
    k = centroids.shape[0]
    if use_gemm(x.shape[0], k, x.shape[1]):
        return assign_nearest_gemm(x, centroids, assign_exact, xx)
    return assign_exact(x, centroids)


def hartigan_pass(x, labels, centroids, counts, margin, xx=None):
    """One sweep of single-point transfers, in place; returns the move count."""
    if use_gemm(x.shape[0], centroids.shape[0], x.shape[1]):
        return hartigan_pass_gemm(x, labels, centroids, counts, margin, hartigan_block, xx)
    return hartigan_exact(x, labels, centroids, counts, margin)
