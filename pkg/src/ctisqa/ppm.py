"""Patch perception: length normalization and learnable-query cross-attention.

Row-vector convention throughout::

    Q = queries @ w_q.T          (L, d)
    K = X @ w_k.T                (M, d)
    V = X @ w_v.T                (M, d)
    A = softmax(Q @ K.T / sqrt(d) with padded columns masked)
    R_local = A @ V              (L, d)

Everything is computed in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AllMaskedInput, DimensionMismatch, NonDivisibleConfig
from .features import PatchFeatureMatrix, read_matrix, write_matrix

DEFAULT_M = 4096
DEFAULT_SEGMENTS = 8
DEFAULT_L = 32

MASK_LOGIT = -1e30


@dataclass
class NormalizedPatchSet:
    x: np.ndarray
    mask: np.ndarray
    m_max: int
    n_segments: int
    # source row per output row, -1 for padding
    indices: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class PpmParams:
    queries: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        for name in ("w_q", "w_k", "w_v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.queries.shape[1] if self.queries.ndim == 2 else -1
        if self.queries.ndim != 2 or any(w.shape != (d, d) for w in (self.w_q, self.w_k, self.w_v)):
            raise DimensionMismatch(
                f"inconsistent PPM shapes: queries {self.queries.shape}, "
                f"w_q {self.w_q.shape}, w_k {self.w_k.shape}, w_v {self.w_v.shape}")
        if not all(np.isfinite(b).all() for b in self.blocks().values()):
            raise ValueError("PPM parameters must be finite")

    @property
    def l_queries(self) -> int:
        return self.queries.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]

    def blocks(self) -> dict:
        return {"queries": self.queries, "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v}

    @classmethod
    def init(cls, seed: int, dim: int, l_queries: int = DEFAULT_L, scale: float = 0.1):
        """Seeded uniform(-scale, scale) initialization."""
        rng = np.random.default_rng(seed)
        return cls(
            queries=rng.uniform(-scale, scale, (l_queries, dim)),
            w_q=rng.uniform(-scale, scale, (dim, dim)),
            w_k=rng.uniform(-scale, scale, (dim, dim)),
            w_v=rng.uniform(-scale, scale, (dim, dim)),
        )


@dataclass
class LocalRepresentation:
    tokens: np.ndarray
    attention: np.ndarray

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def segment_indices(n: int, m_max: int, n_segments: int, rng) -> np.ndarray:
    """Pick ``m_max // n_segments`` evenly spaced rows from each of
    ``n_segments`` contiguous segments of ``range(n)``, with a random phase
    per segment. Requires ``n >= m_max``."""
    per = m_max // n_segments
    bounds = (np.arange(n_segments + 1) * n) // n_segments
    out = np.empty(m_max, dtype=np.int64)
    for s in range(n_segments):
        lo, hi = int(bounds[s]), int(bounds[s + 1])
        step = (hi - lo) / per  # >= 1 because hi - lo >= n // n_segments >= per
        phase = rng.random()
        idx = lo + np.floor((np.arange(per) + phase) * step).astype(np.int64)
        out[s * per:(s + 1) * per] = np.minimum(idx, hi - 1)
    return out


def normalize_length(x, m_max: int = DEFAULT_M, n_segments: int = DEFAULT_SEGMENTS,
                     seed: int = 0) -> NormalizedPatchSet:
    """Pad short sequences with zero rows; subsample long ones segment-wise."""
    if m_max < 1 or n_segments < 1 or m_max % n_segments:
        raise NonDivisibleConfig(f"n_segments={n_segments} must divide m_max={m_max}")
    data = x.data if isinstance(x, PatchFeatureMatrix) else np.asarray(x)
    n, d = data.shape
    out = np.zeros((m_max, d), dtype=np.float64)
    mask = np.zeros(m_max, dtype=bool)
    if n < m_max:
        out[:n] = data
        mask[:n] = True
        indices = np.concatenate([np.arange(n), np.full(m_max - n, -1)]).astype(np.int64)
    else:
        indices = segment_indices(n, m_max, n_segments, np.random.default_rng(seed))
        out[:] = data[indices]
        mask[:] = True
    return NormalizedPatchSet(x=out, mask=mask, m_max=m_max, n_segments=n_segments,
                              indices=indices)


def _check(p: PpmParams, s: NormalizedPatchSet):
    if s.x.ndim != 2 or s.x.shape[1] != p.dim:
        raise DimensionMismatch(f"patch dim {s.x.shape[-1]} != PPM dim {p.dim}")
    if s.mask.shape != (s.x.shape[0],):
        raise DimensionMismatch("mask length must equal the number of rows")
    if not s.mask.any():
        raise AllMaskedInput("every patch position is padding")


def _forward(p: PpmParams, x, mask, mask_padding=True):
    d = p.dim
    q = p.queries @ p.w_q.T
    k = x @ p.w_k.T
    v = x @ p.w_v.T
    logits = (q @ k.T) / math.sqrt(d)
    if mask_padding:
        logits[:, ~mask] = MASK_LOGIT
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    a = e / e.sum(axis=1, keepdims=True)
    return q, k, v, a, a @ v


def ppm_forward(p: PpmParams, s: NormalizedPatchSet, mask_padding: bool = True) -> LocalRepresentation:
    """Compress the normalized patch set into ``L`` tokens.

    With ``mask_padding=False`` the zero padding rows take part in the
    softmax like real patches.
    """
    _check(p, s)
    mask = s.mask if mask_padding else np.ones_like(s.mask)
    _, _, _, a, r = _forward(p, np.asarray(s.x, dtype=np.float64), mask, mask_padding)
    return LocalRepresentation(tokens=r, attention=a)


def ppm_backward(p: PpmParams, s: NormalizedPatchSet, upstream_grad,
                 mask_padding: bool = True) -> dict:
    """Gradients of ``sum(upstream_grad * R_local)`` for every parameter block."""
    _check(p, s)
    x = np.asarray(s.x, dtype=np.float64)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (p.l_queries, p.dim):
        raise DimensionMismatch(f"upstream_grad must be {(p.l_queries, p.dim)}, got {g.shape}")
    mask = s.mask if mask_padding else np.ones_like(s.mask)
    q, k, v, a, _ = _forward(p, x, mask, mask_padding)
    scale = 1.0 / math.sqrt(p.dim)

    d_a = g @ v.T
    d_v = a.T @ g
    d_logits = a * (d_a - (d_a * a).sum(axis=1, keepdims=True))
    d_q = d_logits @ k * scale
    d_k = d_logits.T @ q * scale
    return {
        "queries": d_q @ p.w_q,
        "w_q": d_q.T @ p.queries,
        "w_k": d_k.T @ x,
        "w_v": d_v.T @ x,
    }


# ---------------------------------------------------------------------------
# gradient check


def _objective(p, x, mask, g, mask_padding):
    return float((g * _forward(p, x, mask, mask_padding)[4]).sum())


def numeric_gradients(p: PpmParams, s: NormalizedPatchSet, upstream_grad, h=1e-5,
                      mask_padding=True) -> dict:
    """Central finite differences of the same objective as ``ppm_backward``."""
    x = np.asarray(s.x, dtype=np.float64)
    g = np.asarray(upstream_grad, dtype=np.float64)
    mask = s.mask if mask_padding else np.ones_like(s.mask)
    out = {}
    for name, block in p.blocks().items():
        grad = np.zeros_like(block)
        for idx in np.ndindex(block.shape):
            orig = block[idx]
            block[idx] = orig + h
            f_plus = _objective(p, x, mask, g, mask_padding)
            block[idx] = orig - h
            f_minus = _objective(p, x, mask, g, mask_padding)
            block[idx] = orig
            grad[idx] = (f_plus - f_minus) / (2 * h)
        out[name] = grad
    return out


def relative_error(analytic, numeric) -> float:
    """max |a - n| over a block, relative to the block's largest magnitude.

    A block whose analytic and numeric gradients are both exactly zero
    reports 0.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


@dataclass
class GradCheckReport:
    seeds: list
    dims: dict
    max_rel_error: dict
    threshold: float

    @property
    def passed(self) -> bool:
        return all(e < self.threshold for e in self.max_rel_error.values())

    def to_json(self) -> str:
        return json.dumps({
            "seeds": self.seeds,
            "dims": self.dims,
            "max_rel_error": self.max_rel_error,
            "threshold": self.threshold,
            "passed": self.passed,
        }, indent=2)


def random_case(seed, d, m, l, n_valid=None, zero_params=False):
    """Seeded parameters, patch set and upstream gradient for checking."""
    rng = np.random.default_rng(seed)
    if zero_params:
        p = PpmParams(np.zeros((l, d)), np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)))
    else:
        p = PpmParams(queries=rng.uniform(-0.1, 0.1, (l, d)), w_q=rng.uniform(-0.1, 0.1, (d, d)),
                      w_k=rng.uniform(-0.1, 0.1, (d, d)), w_v=rng.uniform(-0.1, 0.1, (d, d)))
    if n_valid is None:
        n_valid = int(rng.integers(1, m + 1))
    feats = rng.standard_normal((n_valid, d))
    s = normalize_length(feats, m_max=m, n_segments=1)
    g = rng.standard_normal((l, d))
    return p, s, g


def grad_check(seeds=range(20), dims=(8, 6, 3), h=1e-5, threshold=1e-5,
               perturb=0.0, zero_params=False) -> GradCheckReport:
    """Compare ``ppm_backward`` to central differences over several seeds.

    ``dims`` is ``(d, M, L)``. ``perturb`` is added to every analytic entry
    (negative control).
    """
    d, m, l = dims
    if d > 16 or m > 8 or l > 4:
        raise ValueError("grad_check is meant for small dims (d<=16, M<=8, L<=4)")
    seeds = list(seeds)
    worst = {name: 0.0 for name in ("queries", "w_q", "w_k", "w_v")}
    for seed in seeds:
        p, s, g = random_case(seed, d, m, l, zero_params=zero_params)
        analytic = ppm_backward(p, s, g)
        numeric = numeric_gradients(p, s, g, h=h)
        for name in worst:
            err = relative_error(analytic[name] + perturb, numeric[name])
            worst[name] = max(worst[name], err)
    return GradCheckReport(seeds=seeds, dims={"d": d, "M": m, "L": l},
                           max_rel_error=worst, threshold=threshold)


# ---------------------------------------------------------------------------
# persistence


def save_params(p: PpmParams, path) -> int:
    """Blocks are stacked row-wise as [queries; w_q; w_k; w_v] in one container."""
    stacked = np.vstack([p.queries, p.w_q, p.w_k, p.w_v])
    return write_matrix(path, stacked, label=f"ppm-params L={p.l_queries}", float64=True)


def load_params(path) -> PpmParams:
    data, _, label = read_matrix(path)
    if not label.startswith("ppm-params L="):
        raise ValueError(f"{path} does not hold PPM parameters (label {label!r})")
    l = int(label.split("=", 1)[1])
    d = data.shape[1]
    if data.shape[0] != l + 3 * d:
        raise DimensionMismatch(f"expected {l + 3 * d} rows for L={l}, d={d}, got {data.shape[0]}")
    return PpmParams(data[:l], data[l:l + d], data[l + d:l + 2 * d], data[l + 2 * d:])
