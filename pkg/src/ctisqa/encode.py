"""Per-slide dual-stream encoding: global K-means vector plus PPM tokens, fused."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .features import PatchFeatureMatrix, fnv1a64
from .fusion import DEFAULT_D_OUT, FusionParams, SlideTokenSequence, fuse
from .kmeans import ClusterConfig, global_representation, kmeans_fit
from .ppm import DEFAULT_L, DEFAULT_M, DEFAULT_SEGMENTS, PpmParams, normalize_length, ppm_forward
from .errors import NonDivisibleConfig


@dataclass(frozen=True)
class EncodeConfig:
    n_clusters: int = 16
    m_max: int = DEFAULT_M
    n_segments: int = DEFAULT_SEGMENTS
    l_queries: int = DEFAULT_L
    d_out: int = DEFAULT_D_OUT
    seed: int = 0
    n_restarts: int = 4
    max_iters: int = 100

    def __post_init__(self):
        for name in ("n_clusters", "m_max", "n_segments", "l_queries", "d_out", "n_restarts",
                     "max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.m_max % self.n_segments:
            raise NonDivisibleConfig(f"n_segments={self.n_segments} must divide m_max={self.m_max}")

    def to_json(self) -> dict:
        return asdict(self)


def slide_seed(seed: int, slide_id: str) -> int:
    """Per-slide seed, independent of slide order and worker count."""
    ss = np.random.SeedSequence([seed & (2**64 - 1), fnv1a64(slide_id.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def default_params(cfg: EncodeConfig, dim: int) -> tuple[PpmParams, FusionParams]:
    """Seeded PPM and fusion weights shared by every slide of a run."""
    ss = np.random.SeedSequence(cfg.seed & (2**64 - 1)).spawn(2)
    ppm_seed = int(ss[0].generate_state(1, dtype=np.uint64)[0])
    fus_seed = int(ss[1].generate_state(1, dtype=np.uint64)[0])
    return (PpmParams.init(ppm_seed, dim, cfg.l_queries),
            FusionParams.init(fus_seed, dim, cfg.d_out))


def encode_slide(m: PatchFeatureMatrix, cfg: EncodeConfig, ppm: PpmParams,
                 fusion: FusionParams) -> tuple[SlideTokenSequence, dict]:
    """Encode one slide; returns the ``(1 + L, d_out)`` tokens and run facts."""
    seed = slide_seed(cfg.seed, m.slide_id)
    timings = {}
    t0 = time.perf_counter()
    clustering = kmeans_fit(m, ClusterConfig(n_clusters=cfg.n_clusters, seed=seed,
                                             n_restarts=cfg.n_restarts, max_iters=cfg.max_iters))
    g = global_representation(clustering)
    t1 = time.perf_counter()
    patches = normalize_length(m, cfg.m_max, cfg.n_segments, seed=seed)
    local = ppm_forward(ppm, patches)
    t2 = time.perf_counter()
    seq = fuse(g, local, fusion)
    t3 = time.perf_counter()
    timings = {"global_s": t1 - t0, "local_s": t2 - t1, "fuse_s": t3 - t2}
    facts = {
        "slide_id": m.slide_id,
        "n_patches": m.n_patches,
        "seed": seed,
        "inertia": clustering.inertia,
        "iterations": clustering.iterations,
        "restart": clustering.restart,
        "n_valid": patches.n_valid,
        "timings": timings,
    }
    return seq, facts
