"""The numba and numpy paths, and the BLAS and exact distance paths, agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ctisqa import _kernels as K
from ctisqa.features import synth_slide
from ctisqa.kmeans import ClusterConfig, kmeans_fit

needs_numba = pytest.mark.skipif(K.numba is None, reason="numba not importable")


def _data(seed, n=500, d=7, k=5, dtype=np.float32):
    r = np.random.default_rng(seed)
    return r.standard_normal((n, d)).astype(dtype), r.standard_normal((k, d))


@needs_numba
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_assign_nb_equals_np(dtype):
    x, c = _data(0, dtype=dtype)
    l1, d1 = K.assign_nearest_np(x, c)
    l2, d2 = K.assign_nearest_nb(x, c)
    assert np.array_equal(l1, l2)
    assert np.allclose(d1, d2, rtol=1e-12, atol=1e-12)


@needs_numba
def test_ties_go_to_lowest_index_on_both_paths():
    x = np.array([[1.0, 0.0]])
    c = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert K.assign_nearest_np(x, c)[0][0] == 0
    assert K.assign_nearest_nb(x, c)[0][0] == 0


@needs_numba
def test_cluster_sums_and_point_dists():
    x, c = _data(1)
    labels = K.assign_nearest_np(x, c)[0]
    s1, n1 = K.cluster_sums_np(x, labels, 5)
    s2, n2 = K.cluster_sums_nb(x, labels, 5)
    assert np.array_equal(n1, n2)
    assert np.allclose(s1, s2, rtol=1e-12, atol=1e-12)
    assert np.allclose(K.sq_dist_to_point_np(x, c[0]), K.sq_dist_to_point_nb(x, c[0]),
                       rtol=1e-12, atol=1e-12)


@needs_numba
def test_hartigan_pass_paths_agree():
    x, c = _data(2, dtype=np.float64)
    labels = K.assign_nearest_np(x, c)[0]
    sums, counts = K.cluster_sums_np(x, labels, 5)
    cents = sums / np.maximum(counts, 1)[:, None]
    out = []
    for fn in (K.hartigan_pass_np, K.hartigan_pass_nb):
        lab, cen, cnt = labels.copy(), cents.copy(), counts.astype(np.float64)
        moves = fn(x, lab, cen, cnt, 1e-12)
        out.append((moves, lab, cen))
    assert out[0][0] == out[1][0]
    assert np.array_equal(out[0][1], out[1][1])
    assert np.allclose(out[0][2], out[1][2], rtol=1e-10, atol=1e-12)


@needs_numba
def test_fnv_paths_agree():
    buf = np.random.default_rng(3).integers(0, 256, 10_000, dtype=np.uint8)
    assert K.fnv1a64_np(buf) == K.fnv1a64_nb(buf) == K.fnv1a64_nb(buf.tobytes())


def _fnv_scalar(data):
    h = K.FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * K.FNV_PRIME) & K._MASK64
    return h


def test_vectorized_fnv_matches_byte_loop():
    r = np.random.default_rng(8)
    for n in (0, 1, 2, 63, 64, 65, 255, 256, 1000):
        buf = r.integers(0, 256, n, dtype=np.uint8)
        assert K.fnv1a64_np(buf) == _fnv_scalar(buf)
        assert K.fnv1a64_np(buf.tobytes()) == _fnv_scalar(buf)
    assert K.fnv1a64_np(b"\xff" * 300) == _fnv_scalar(b"\xff" * 300)


def test_vectorized_fnv_across_blocks():
    buf = np.random.default_rng(9).integers(0, 256, 2 * K._FNV_BLOCK + 77, dtype=np.uint8)
    # streaming: hashing the tail from the head's state equals hashing the whole
    head = K._FNV_BLOCK + 5
    h = K.fnv1a64_np(buf[:head])
    for b in bytes(buf[head:head + 500]):
        h = ((h ^ b) * K.FNV_PRIME) & K._MASK64
    assert K.fnv1a64_np(buf[:head + 500]) == h
    if K.numba is not None:
        assert K.fnv1a64_np(buf) == K.fnv1a64_nb(buf)


def test_gemm_assignment_equals_exact():
    r = np.random.default_rng(4)
    x = r.standard_normal((3000, 64))
    c = r.standard_normal((16, 64))
    # exact duplicates of centroids force near-ties through the recheck path
    x[:16] = c
    x[16] = (c[0] + c[1]) / 2
    lab_g, d_g = K.assign_nearest_gemm(x, c, K.assign_exact)
    lab_e, d_e = K.assign_exact(x, c)
    assert np.array_equal(lab_g, lab_e)
    assert np.allclose(d_g, d_e, rtol=1e-12, atol=1e-12)


def test_gemm_hartigan_matches_exact_quality():
    r = np.random.default_rng(5)
    x = r.standard_normal((2500, 32))
    c = x[:8].copy()
    labels = K.assign_exact(x, c)[0]
    sums, counts = K.cluster_sums(x, labels, 8)
    cents = sums / np.maximum(counts, 1)[:, None]
    a = (labels.copy(), cents.copy(), counts.astype(np.float64))
    b = (labels.copy(), cents.copy(), counts.astype(np.float64))
    m1 = K.hartigan_pass_gemm(x, *a, 1e-12, K.hartigan_block)
    m2 = K.hartigan_exact(x, *b, 1e-12)
    inertia = [float(((x - cen[lab]) ** 2).sum()) for lab, cen, _ in (a, b)]
    assert m1 > 0 and m2 > 0
    # both sweeps reach a transfer-stable partition of comparable quality
    assert inertia[0] == pytest.approx(inertia[1], rel=1e-3)


def test_kmeans_large_path_is_exact():
    m = synth_slide(11, 12000, 64, n_modes=8)
    assert K.use_gemm(12000, 8, 64)
    res = kmeans_fit(m, ClusterConfig(n_clusters=8, seed=0, n_restarts=1))
    lab, _ = K.assign_exact(m.data.astype(np.float64), res.centroids)
    assert np.array_equal(lab, res.assignments)
    x = m.data.astype(np.float64)
    assert res.inertia == pytest.approx(float(((x - res.centroids[lab]) ** 2).sum()), rel=1e-9)


@needs_numba
def test_backends_give_identical_clustering(tmp_path):
    code = ("import numpy as np\n"
            "from ctisqa import _kernels\n"
            "from ctisqa.features import synth_slide\n"
            "from ctisqa.kmeans import ClusterConfig, kmeans_fit\n"
            "m = synth_slide(2, 4000, 40, n_modes=5)\n"
            "r = kmeans_fit(m, ClusterConfig(n_clusters=5, seed=1))\n"
            "print(_kernels.BACKEND, r.assignments.tobytes().hex()[:4000], repr(r.inertia))\n")
    outs = {}
    for flag in ("", "1"):
        env = dict(os.environ, CTISQA_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        backend, labels, inertia = res.stdout.split()
        outs[backend] = (labels, float(inertia))
    assert set(outs) == {"numba", "numpy"}
    assert outs["numba"][0] == outs["numpy"][0]
    assert outs["numba"][1] == pytest.approx(outs["numpy"][1], rel=1e-12)
