import numpy as np
import pytest

from ctisqa.encode import EncodeConfig, default_params, encode_slide, slide_seed
from ctisqa.errors import DimensionMismatch, NonDivisibleConfig
from ctisqa.features import synth_slide
from ctisqa.fusion import (FusionParams, fuse, load_fusion_params, load_tokens,
                           save_fusion_params, save_tokens)
from ctisqa.kmeans import GlobalRepresentation
from ctisqa.ppm import LocalRepresentation


def _inputs(rng, d=3, l=2):
    g = GlobalRepresentation(rng.standard_normal(d))
    loc = LocalRepresentation(rng.standard_normal((l, d)), np.zeros((l, 1)))
    return g, loc


def test_identity_projection(rng):
    g, loc = _inputs(rng)
    out = fuse(g, loc, FusionParams(np.eye(3), np.zeros(3)))
    assert np.array_equal(out.tokens, np.vstack([g.vector, loc.tokens]))
    assert out.n_local == 2


def test_zero_input_gives_bias():
    g = GlobalRepresentation(np.zeros(2))
    loc = LocalRepresentation(np.zeros((3, 2)), np.zeros((3, 1)))
    b = np.array([0.5, -1.0, 2.0])
    out = fuse(g, loc, FusionParams(np.ones((2, 3)), b))
    assert np.array_equal(out.tokens, np.tile(b, (4, 1)))


def test_two_by_two_hand_case():
    g = GlobalRepresentation(np.array([1.0, 2.0]))
    loc = LocalRepresentation(np.array([[3.0, -1.0]]), np.zeros((1, 1)))
    p = FusionParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5]))
    out = fuse(g, loc, p).tokens
    # [1,2] -> [1+6, 2+8] + b ; [3,-1] -> [3-3, 6-4] + b
    assert np.allclose(out, [[7.5, 9.5], [0.5, 1.5]], atol=1e-12, rtol=0)


def test_superposition(rng):
    p = FusionParams.init(0, 3, 5)
    p.bias[:] = 0
    g1, l1 = _inputs(rng)
    g2, l2 = _inputs(rng)
    a = fuse(g1, l1, p).tokens + fuse(g2, l2, p).tokens
    both = fuse(GlobalRepresentation(g1.vector + g2.vector),
                LocalRepresentation(l1.tokens + l2.tokens, l1.attention), p).tokens
    assert np.allclose(a, both, atol=1e-12)


def test_dimension_errors(rng):
    g, loc = _inputs(rng, d=3)
    with pytest.raises(DimensionMismatch):
        fuse(g, loc, FusionParams.init(0, 4, 2))
    with pytest.raises(DimensionMismatch):
        FusionParams(np.ones((2, 3)), np.ones(2))


def test_persistence(tmp_path, rng):
    p = FusionParams.init(1, 3, 4, per_stream=True)
    save_fusion_params(p, tmp_path / "f.ctis")
    q = load_fusion_params(tmp_path / "f.ctis")
    for a, b in ((p.proj, q.proj), (p.bias, q.bias), (p.global_pre, q.global_pre),
                 (p.local_pre, q.local_pre)):
        assert np.array_equal(a, b)
    g, loc = _inputs(rng)
    seq = fuse(g, loc, p)
    save_tokens(seq, tmp_path / "t.ctis", "slide-x")
    back, label = load_tokens(tmp_path / "t.ctis")
    assert label == "slide-x" and np.array_equal(back.tokens, seq.tokens)


def test_encode_slide_shape_and_determinism():
    cfg = EncodeConfig(m_max=64, n_segments=4, l_queries=5, d_out=7, n_restarts=2)
    m = synth_slide(0, 300, 6, n_modes=4, slide_id="s0")
    ppm, fus = default_params(cfg, 6)
    a, facts = encode_slide(m, cfg, ppm, fus)
    b, _ = encode_slide(m, cfg, ppm, fus)
    assert a.tokens.shape == (6, 7)
    assert np.array_equal(a.tokens, b.tokens)
    assert facts["seed"] == slide_seed(0, "s0") != slide_seed(0, "s1")
    with pytest.raises(NonDivisibleConfig):
        EncodeConfig(m_max=10, n_segments=4)
