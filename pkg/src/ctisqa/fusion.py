"""Fuse the global vector and the local tokens into one projected sequence.

Row 0 of the output is the projected global vector, rows 1..L the projected
local tokens. Every row goes through the same affine map ``row @ proj + bias``.
Optional per-stream ``d x d`` pre-projections are applied first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .features import read_matrix, write_matrix
from .kmeans import GlobalRepresentation
from .ppm import LocalRepresentation

DEFAULT_D_OUT = 4096


@dataclass
class FusionParams:
    proj: np.ndarray
    bias: np.ndarray
    global_pre: np.ndarray | None = None
    local_pre: np.ndarray | None = None

    def __post_init__(self):
        self.proj = np.asarray(self.proj, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.proj.ndim != 2 or self.bias.shape != (self.proj.shape[1],):
            raise DimensionMismatch(f"proj {self.proj.shape} and bias {self.bias.shape} disagree")
        d = self.proj.shape[0]
        for name in ("global_pre", "local_pre"):
            w = getattr(self, name)
            if w is not None:
                w = np.asarray(w, dtype=np.float64)
                if w.shape != (d, d):
                    raise DimensionMismatch(f"{name} must be {(d, d)}, got {w.shape}")
                setattr(self, name, w)
        if not (np.isfinite(self.proj).all() and np.isfinite(self.bias).all()):
            raise ValueError("fusion parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.proj.shape[0]

    @property
    def d_out(self) -> int:
        return self.proj.shape[1]

    @classmethod
    def init(cls, seed: int, d_in: int, d_out: int = DEFAULT_D_OUT, scale: float = 0.1,
             per_stream: bool = False):
        rng = np.random.default_rng(seed)
        proj = rng.uniform(-scale, scale, (d_in, d_out))
        bias = np.zeros(d_out)
        if per_stream:
            return cls(proj, bias, rng.uniform(-scale, scale, (d_in, d_in)),
                       rng.uniform(-scale, scale, (d_in, d_in)))
        return cls(proj, bias)


@dataclass
class SlideTokenSequence:
    tokens: np.ndarray

    @property
    def n_local(self) -> int:
        return self.tokens.shape[0] - 1


def fuse(g: GlobalRepresentation, l: LocalRepresentation, p: FusionParams) -> SlideTokenSequence:
    gv = np.asarray(g.vector, dtype=np.float64)
    lt = np.asarray(l.tokens, dtype=np.float64)
    if gv.shape != (p.d_in,) or lt.ndim != 2 or lt.shape[1] != p.d_in:
        raise DimensionMismatch(
            f"global {gv.shape} / local {lt.shape} do not match fusion input dim {p.d_in}")
    if p.global_pre is not None:
        gv = gv @ p.global_pre
    if p.local_pre is not None:
        lt = lt @ p.local_pre
    stacked = np.vstack([gv[None, :], lt])
    return SlideTokenSequence(tokens=stacked @ p.proj + p.bias)


def save_tokens(seq: SlideTokenSequence, path, slide_id: str = "") -> int:
    return write_matrix(path, seq.tokens, label=slide_id, float64=True)


def load_tokens(path) -> tuple[SlideTokenSequence, str]:
    data, _, label = read_matrix(path)
    return SlideTokenSequence(tokens=data), label


def save_fusion_params(p: FusionParams, path) -> int:
    """``[proj; bias]`` in one container; per-stream maps go to ``path + '.pre'``."""
    has_pre = p.global_pre is not None or p.local_pre is not None
    checksum = write_matrix(path, np.vstack([p.proj, p.bias[None, :]]),
                            label=f"fusion-params pre={int(has_pre)}", float64=True)
    if has_pre:
        eye = np.eye(p.d_in)
        g = p.global_pre if p.global_pre is not None else eye
        lp = p.local_pre if p.local_pre is not None else eye
        write_matrix(str(path) + ".pre", np.vstack([g, lp]), label="fusion-pre", float64=True)
    return checksum


def load_fusion_params(path) -> FusionParams:
    data, _, label = read_matrix(path)
    if not label.startswith("fusion-params"):
        raise ValueError(f"{path} does not hold fusion parameters (label {label!r})")
    proj, bias = data[:-1], data[-1]
    if label.endswith("pre=1"):
        pre, _, _ = read_matrix(str(path) + ".pre")
        d = proj.shape[0]
        return FusionParams(proj, bias, pre[:d], pre[d:])
    return FusionParams(proj, bias)
