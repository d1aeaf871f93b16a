#!/usr/bin/env python3
"""
LSMVOS - Similarity Matching
Long-term (whole reference frame) and short-term (windowed previous frame)
pixel matching with gated top-N selection, plus analytic backward passes.

Both operators are split into an object-independent correlation volume
(raw dot products, float64 accumulation, float32 storage) and a per-object
gated selection, so one volume per frame can serve every tracked object.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple
import logging

import numpy as np

from numerics import (ShapeError, as_tensor, parallel_rows, require_rank,
                      topk_with_indices)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("matching")

SIMILARITY_MODES = ("cosine", "dot")
UNIT_NORM_TOL = 1e-3


class Polarity(Enum):
    FOREGROUND = "fg"
    BACKGROUND = "bg"


@dataclass(frozen=True)
class MatchConfig:
    k: int = 8
    n: int = 256
    similarity: str = "cosine"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"MatchConfig.k must be >= 0, got {self.k}")
        if self.n < 1:
            raise ValueError(f"MatchConfig.n must be >= 1, got {self.n}")
        if self.similarity not in SIMILARITY_MODES:
            raise ValueError(f"MatchConfig.similarity must be one of {SIMILARITY_MODES}, "
                             f"got {self.similarity!r}")

    @property
    def window_candidates(self) -> int:
        return (2 * self.k + 1) ** 2


@dataclass(frozen=True)
class GateMask:
    values: np.ndarray  # 1×H×W in [0, 1]

    def __post_init__(self):
        v = as_tensor(self.values, "gate")
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[0] != 1:
            raise ShapeError(f"gate must be 1×H×W, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError(f"gate values must lie in [0, 1], got {v.min()}..{v.max()}")
        object.__setattr__(self, 'values', v)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def for_polarity(self, polarity: Polarity) -> np.ndarray:
        if polarity is Polarity.FOREGROUND:
            return self.values[0]
        return (np.float32(1.0) - self.values[0]).astype(np.float32)


@dataclass
class SavedMatch:
    cur: np.ndarray
    other: np.ndarray        # prev (short-term) or ref (long-term)
    gate: np.ndarray         # H×W candidate gate with polarity applied
    k: Optional[int] = None  # window radius; None for long-term


@dataclass
class SimilarityMap:
    values: np.ndarray                   # N×H×W, descending along axis 0
    indices: Optional[np.ndarray] = None # N×H×W candidate ids, -1 for zero fill
    saved: Optional[SavedMatch] = None

    @property
    def channels(self) -> int:
        return self.values.shape[0]


# ═══════════════════════════════════════════════════════════════
# HELPERS
# ═══════════════════════════════════════════════════════════════

def downsample_mask(mask, stride: int = 8) -> GateMask:
    """Non-overlapping stride×stride average pooling of a 1×H×W (or H×W) mask."""
    m = as_tensor(mask, "mask")
    if m.ndim == 2:
        m = m[None]
    if m.ndim != 3 or m.shape[0] != 1:
        raise ShapeError(f"downsample_mask: expected 1×H×W, got shape {m.shape}")
    _, h, w = m.shape
    if h % stride or w % stride:
        raise ShapeError(f"downsample_mask: extents {w}x{h} not divisible by stride {stride}")
    pooled = m.astype(np.float64).reshape(1, h // stride, stride, w // stride, stride).mean(axis=(2, 4))
    return GateMask(np.clip(pooled, 0.0, 1.0).astype(np.float32))


def window_offsets(k: int) -> List[Tuple[int, int]]:
    """(dy, dx) in raster order; candidate id = position in this list."""
    return [(dy, dx) for dy in range(-k, k + 1) for dx in range(-k, k + 1)]


def _overlap(n: int, d: int) -> Tuple[int, int]:
    """Range [lo, hi) of i such that 0 <= i + d < n."""
    return max(0, -d), min(n, n - d)


def _check_features(x, name: str, cfg: MatchConfig) -> np.ndarray:
    x = as_tensor(x, name)
    require_rank(x, 3, name)
    if cfg.similarity == "cosine":
        norms = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=0))
        bad = (np.abs(norms - 1.0) > UNIT_NORM_TOL) & (norms > 1e-6)
        if bad.any():
            raise ValueError(f"{name}: cosine similarity requires unit-norm (or zero) channel "
                             f"vectors; {int(bad.sum())} positions violate it")
    return x


def _check_gate(gate: GateMask, shape: Tuple[int, int], name: str):
    if gate.shape != shape:
        raise ShapeError(f"{name}: gate {gate.shape} does not match feature extents {shape}")


def select_gated(volume: np.ndarray, candidate_gate: np.ndarray, n: int,
                 valid: Optional[np.ndarray] = None,
                 threads: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Multiply candidate scores by their gates and keep the top n per position.
    candidate_gate broadcasts against volume (Q×1×1 or Q×H×W). Invalid
    candidates never get selected; missing slots are zero-filled (index -1).
    """
    q, h, w = volume.shape
    values = np.empty((n, h, w), dtype=np.float32)
    indices = np.empty((n, h, w), dtype=np.int32)
    per_row = candidate_gate.shape[1] != 1

    def work(r0: int, r1: int):
        g = candidate_gate[:, r0:r1] if per_row else candidate_gate
        scores = volume[:, r0:r1] * g
        if valid is not None:
            scores = np.where(valid[:, r0:r1], scores, np.float32(-np.inf))
        v, i = topk_with_indices(scores, n)
        absent = np.isneginf(v)
        v[absent] = 0.0
        i[absent] = -1
        values[:, r0:r1] = v
        indices[:, r0:r1] = i

    parallel_rows(work, h, threads)
    return values, indices


# ═══════════════════════════════════════════════════════════════
# SHORT-TERM (WINDOWED) MATCHING
# ═══════════════════════════════════════════════════════════════

def short_term_volume(cur, prev, k: int,
                      threads: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dot products of cur(i,j) with prev(i+dy, j+dx) for every window offset.
    Returns (volume (2k+1)²×H×W, valid mask of the same shape).
    """
    cur = as_tensor(cur, "cur")
    prev = as_tensor(prev, "prev")
    if cur.shape != prev.shape:
        raise ShapeError(f"short_term_volume: cur {cur.shape} vs prev {prev.shape}")
    _, h, w = cur.shape
    offsets = window_offsets(k)
    volume = np.zeros((len(offsets), h, w), dtype=np.float32)
    valid = np.zeros((len(offsets), h, w), dtype=bool)
    cur64, prev64 = cur.astype(np.float64), prev.astype(np.float64)

    def work(o0: int, o1: int):
        for o in range(o0, o1):
            dy, dx = offsets[o]
            i0, i1 = _overlap(h, dy)
            j0, j1 = _overlap(w, dx)
            if i0 >= i1 or j0 >= j1:
                continue
            volume[o, i0:i1, j0:j1] = np.einsum(
                'chw,chw->hw', cur64[:, i0:i1, j0:j1],
                prev64[:, i0 + dy:i1 + dy, j0 + dx:j1 + dx])
            valid[o, i0:i1, j0:j1] = True

    parallel_rows(work, len(offsets), threads)
    return volume, valid


def window_gate(gate: np.ndarray, k: int) -> np.ndarray:
    """H×W gate → (2k+1)²×H×W gate value at each candidate's position (0 outside)."""
    h, w = gate.shape
    offsets = window_offsets(k)
    out = np.zeros((len(offsets), h, w), dtype=np.float32)
    for o, (dy, dx) in enumerate(offsets):
        i0, i1 = _overlap(h, dy)
        j0, j1 = _overlap(w, dx)
        if i0 < i1 and j0 < j1:
            out[o, i0:i1, j0:j1] = gate[i0 + dy:i1 + dy, j0 + dx:j1 + dx]
    return out


def short_term_match(cur, prev, gate: GateMask, cfg: MatchConfig,
                     polarity: Polarity = Polarity.FOREGROUND,
                     volume: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                     threads: Optional[int] = None) -> SimilarityMap:
    """
    L_ij = top-n over the (2k+1)² window of (prev_d · cur_ij) * M_d.
    `volume` may carry a precomputed short_term_volume(cur, prev, cfg.k).
    """
    cur = _check_features(cur, "cur", cfg)
    prev = _check_features(prev, "prev", cfg)
    if cur.shape != prev.shape:
        raise ShapeError(f"short_term_match: cur {cur.shape} vs prev {prev.shape}")
    _check_gate(gate, cur.shape[1:], "short_term_match")

    vol, valid = volume if volume is not None else short_term_volume(cur, prev, cfg.k, threads)
    if vol.shape != (cfg.window_candidates,) + cur.shape[1:]:
        raise ShapeError(f"short_term_match: volume {vol.shape} does not match k={cfg.k} "
                         f"and extents {cur.shape[1:]}")
    g = gate.for_polarity(polarity)
    values, indices = select_gated(vol, window_gate(g, cfg.k), cfg.n, valid, threads)
    return SimilarityMap(values, indices, SavedMatch(cur, prev, g, cfg.k))


def short_term_match_backward(upstream, sim: SimilarityMap,
                              cfg: MatchConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. cur and prev with selection fixed at the forward indices."""
    if sim.indices is None or sim.saved is None or sim.saved.k is None:
        raise ValueError("short_term_match_backward: forward indices were not saved")
    g = as_tensor(upstream, "upstream grad")
    if g.shape != sim.values.shape:
        raise ShapeError(f"upstream grad {g.shape} vs similarity map {sim.values.shape}")
    cur, prev, gate, k = sim.saved.cur, sim.saved.other, sim.saved.gate, sim.saved.k
    _, h, w = cur.shape
    offsets = window_offsets(k)

    # upstream scattered back to candidate space, times the candidate gate
    coef = np.zeros((len(offsets), h * w), dtype=np.float64)
    idx = sim.indices.reshape(sim.indices.shape[0], -1)
    pos = np.broadcast_to(np.arange(h * w), idx.shape)
    sel = idx >= 0
    coef[idx[sel], pos[sel]] = g.reshape(idx.shape)[sel]
    coef = coef.reshape(len(offsets), h, w) * window_gate(gate, k)

    cur64, prev64 = cur.astype(np.float64), prev.astype(np.float64)
    grad_cur = np.zeros_like(cur64)
    grad_prev = np.zeros_like(prev64)
    for o, (dy, dx) in enumerate(offsets):
        i0, i1 = _overlap(h, dy)
        j0, j1 = _overlap(w, dx)
        if i0 >= i1 or j0 >= j1:
            continue
        c = coef[o, i0:i1, j0:j1]
        grad_cur[:, i0:i1, j0:j1] += c * prev64[:, i0 + dy:i1 + dy, j0 + dx:j1 + dx]
        grad_prev[:, i0 + dy:i1 + dy, j0 + dx:j1 + dx] += c * cur64[:, i0:i1, j0:j1]
    return grad_cur.astype(np.float32), grad_prev.astype(np.float32)


# ═══════════════════════════════════════════════════════════════
# LONG-TERM (GLOBAL) MATCHING
# ═══════════════════════════════════════════════════════════════

def long_term_volume(cur, ref, threads: Optional[int] = None) -> np.ndarray:
    """Dot products of every cur position with every ref position: (H'W')×H×W."""
    cur = as_tensor(cur, "cur")
    ref = as_tensor(ref, "ref")
    require_rank(cur, 3, "cur")
    require_rank(ref, 3, "ref")
    if cur.shape[0] != ref.shape[0]:
        raise ShapeError(f"long_term_volume: channel mismatch cur {cur.shape} vs ref {ref.shape}")
    c, h, w = cur.shape
    ref_t = ref.reshape(c, -1).T.astype(np.float64)
    volume = np.empty((ref_t.shape[0], h, w), dtype=np.float32)

    def work(r0: int, r1: int):
        block = cur[:, r0:r1].reshape(c, -1).astype(np.float64)
        volume[:, r0:r1] = (ref_t @ block).reshape(-1, r1 - r0, w)

    parallel_rows(work, h, threads)
    return volume


def long_term_match(cur, ref, ref_gate: GateMask, cfg: MatchConfig,
                    polarity: Polarity = Polarity.FOREGROUND,
                    volume: Optional[np.ndarray] = None,
                    threads: Optional[int] = None) -> SimilarityMap:
    """
    G_ij = top-n over all reference positions q of (ref_q · cur_ij) * M_q.
    `volume` may carry a precomputed long_term_volume(cur, ref).
    """
    cur = _check_features(cur, "cur", cfg)
    ref = _check_features(ref, "ref", cfg)
    if cur.shape[0] != ref.shape[0]:
        raise ShapeError(f"long_term_match: channel mismatch cur {cur.shape} vs ref {ref.shape}")
    _check_gate(ref_gate, ref.shape[1:], "long_term_match")

    vol = volume if volume is not None else long_term_volume(cur, ref, threads)
    q = ref.shape[1] * ref.shape[2]
    if vol.shape != (q,) + cur.shape[1:]:
        raise ShapeError(f"long_term_match: volume {vol.shape} does not match "
                         f"{q} reference positions and extents {cur.shape[1:]}")
    g = ref_gate.for_polarity(polarity)
    values, indices = select_gated(vol, g.reshape(-1, 1, 1), cfg.n, None, threads)
    return SimilarityMap(values, indices, SavedMatch(cur, ref, g, None))


def long_term_match_backward(upstream, sim: SimilarityMap,
                             cfg: MatchConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. cur and ref with selection fixed at the forward indices."""
    if sim.indices is None or sim.saved is None or sim.saved.k is not None:
        raise ValueError("long_term_match_backward: forward indices were not saved")
    g = as_tensor(upstream, "upstream grad")
    if g.shape != sim.values.shape:
        raise ShapeError(f"upstream grad {g.shape} vs similarity map {sim.values.shape}")
    cur, ref, gate = sim.saved.cur, sim.saved.other, sim.saved.gate
    c = cur.shape[0]
    cur_flat = cur.reshape(c, -1).astype(np.float64)
    ref_flat = ref.reshape(c, -1).astype(np.float64)
    gate_flat = gate.reshape(-1).astype(np.float64)

    idx = sim.indices.reshape(sim.indices.shape[0], -1)
    sel = idx >= 0
    safe = np.where(sel, idx, 0)
    coef = np.where(sel, g.reshape(idx.shape) * gate_flat[safe], 0.0)

    grad_cur = np.zeros_like(cur_flat)
    grad_ref_t = np.zeros((ref_flat.shape[1], c), dtype=np.float64)
    for s in range(idx.shape[0]):
        if not sel[s].any():
            continue
        grad_cur += coef[s] * ref_flat[:, safe[s]]
        np.add.at(grad_ref_t, safe[s][sel[s]], (coef[s] * cur_flat)[:, sel[s]].T)
    return (grad_cur.reshape(cur.shape).astype(np.float32),
            grad_ref_t.T.reshape(ref.shape).astype(np.float32))
