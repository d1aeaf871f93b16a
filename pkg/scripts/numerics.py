#!/usr/bin/env python3
"""
LSMVOS - Numerics
Dense float32 tensors (numpy) and the kernels the network is built from.

Tensors are C×H×W (or K×C×kh×kw for kernels) float32 arrays. Every public
kernel validates its inputs and returns a fresh array; inputs are never
modified, so arrays can be shared read-only between threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("numerics")

FOCAL_EPS = 1e-7


class ShapeError(ValueError):
    """Tensor shape or extent violates an operation's contract."""


# ═══════════════════════════════════════════════════════════════
# VALIDATION
# ═══════════════════════════════════════════════════════════════

def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Validate and convert to a C-contiguous float32 array of rank 1..4."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"{name}: rank must be 1..4, got shape {arr.shape}")
    if any(e < 1 for e in arr.shape):
        raise ShapeError(f"{name}: all extents must be >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


def require_rank(x: np.ndarray, rank: int, name: str):
    if x.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {x.shape}")


def require_same_shape(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ═══════════════════════════════════════════════════════════════
# ROW-BLOCK PARALLELISM
# ═══════════════════════════════════════════════════════════════

def row_blocks(n_rows: int, block: int) -> List[Tuple[int, int]]:
    return [(r, min(r + block, n_rows)) for r in range(0, n_rows, block)]


_pools: Dict[int, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()

def get_pool(threads: int) -> ThreadPoolExecutor:
    """Process-wide kernel pool, one per worker count; created on first use."""
    with _pools_lock:
        pool = _pools.get(threads)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=threads, thread_name_prefix=f"rows{threads}")
            _pools[threads] = pool
            logger.debug(f"Kernel pool created | workers={threads}")
        return pool


def parallel_rows(work: Callable[[int, int], None], n_rows: int,
                  threads: Optional[int] = None, block: Optional[int] = None):
    """
    Run work(start, stop) over fixed-size row blocks.
    Block boundaries depend only on `block`, never on `threads`, and each
    block writes a disjoint output slice, so any thread count gives the
    same bits.
    """
    if threads is None or block is None:
        from settings import get_settings
        s = get_settings()
        threads = threads or s.threads
        block = block or s.row_block
    blocks = row_blocks(n_rows, block)
    if threads <= 1 or len(blocks) <= 1:
        for r0, r1 in blocks:
            work(r0, r1)
        return
    pool = get_pool(threads)
    for fut in [pool.submit(work, r0, r1) for r0, r1 in blocks]:
        fut.result()


# ═══════════════════════════════════════════════════════════════
# CONVOLUTION
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ConvSpec:
    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        kernel = as_tensor(self.kernel, "kernel")
        require_rank(kernel, 4, "kernel")
        bias = as_tensor(self.bias, "bias")
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match kernel {kernel.shape}")
        pad = self.padding
        if isinstance(pad, int):
            pad = (pad, pad)
        pad = tuple(int(p) for p in pad)
        if len(pad) != 2 or min(pad) < 0:
            raise ValueError(f"padding must be two non-negative ints, got {self.padding}")
        if int(self.stride) < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, 'kernel', kernel)
        object.__setattr__(self, 'bias', bias)
        object.__setattr__(self, 'padding', pad)
        object.__setattr__(self, 'stride', int(self.stride))

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def output_extent(self, h: int, w: int) -> Tuple[int, int]:
        _, _, kh, kw = self.kernel.shape
        ph, pw = self.padding
        return ((h + 2 * ph - kh) // self.stride + 1,
                (w + 2 * pw - kw) // self.stride + 1)


def conv2d(x, spec: ConvSpec, threads: Optional[int] = None) -> np.ndarray:
    """Cross-correlation with zero padding. x: C×H×W → K×H'×W'."""
    x = as_tensor(x, "conv2d input")
    require_rank(x, 3, "conv2d input")
    k, c, kh, kw = spec.kernel.shape
    if x.shape[0] != c:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[0]} channels, "
                         f"kernel {spec.kernel.shape} expects {c}")
    ho, wo = spec.output_extent(x.shape[1], x.shape[2])
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: non-positive output extent {ho}x{wo} for input "
                         f"{x.shape}, kernel {spec.kernel.shape}, padding {spec.padding}")

    ph, pw = spec.padding
    s = spec.stride
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    weight = spec.kernel.reshape(k, c * kh * kw)
    bias = spec.bias[:, None, None]
    out = np.empty((k, ho, wo), dtype=np.float32)

    def work(r0: int, r1: int):
        cols = windows[:, r0:r1].transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, -1)
        out[:, r0:r1] = (weight @ cols).reshape(k, r1 - r0, wo) + bias

    parallel_rows(work, ho, threads)
    return out


# ═══════════════════════════════════════════════════════════════
# RESAMPLING / NORMALIZATION / SELECTION
# ═══════════════════════════════════════════════════════════════

def _as_factor(factor: Union[int, float, Fraction]) -> Fraction:
    f = Fraction(factor).limit_denominator(1 << 16)
    if f <= 0:
        raise ValueError(f"resize factor must be positive, got {factor}")
    return f


def _axis_taps(n_in: int, n_out: int, factor: Fraction):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / float(factor) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0).astype(np.float32)


def bilinear_resize(x, factor: Union[int, float, Fraction]) -> np.ndarray:
    """Half-pixel-center bilinear resize of C×H×W by a rational factor."""
    x = as_tensor(x, "bilinear_resize input")
    require_rank(x, 3, "bilinear_resize input")
    f = _as_factor(factor)
    _, h, w = x.shape
    ho, wo = int(h * f), int(w * f)
    if ho < 1 or wo < 1:
        raise ShapeError(f"bilinear_resize: factor {f} maps {h}x{w} to {ho}x{wo}")

    i0, i1, wy = _axis_taps(h, ho, f)
    top, bot = x[:, i0, :], x[:, i1, :]
    rows = top + wy[None, :, None] * (bot - top)
    j0, j1, wx = _axis_taps(w, wo, f)
    left, right = rows[:, :, j0], rows[:, :, j1]
    return np.ascontiguousarray(left + wx[None, None, :] * (right - left), dtype=np.float32)


def l2_normalize_channels(x, eps: float = 1e-8) -> np.ndarray:
    """Divide each position's channel vector by max(||v||, eps)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = as_tensor(x, "l2_normalize_channels input")
    norm = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=0, keepdims=True))
    return (x / np.maximum(norm, eps)).astype(np.float32)


def topk_with_indices(x: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Top-n along axis 0, descending, ties to the lower source index.
    Returns (values n×..., indices n×...); slots past the channel count are
    value 0 / index -1. Accepts -inf entries (callers use them to mark
    absent candidates).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    c = x.shape[0]
    rest = x.shape[1:]
    flat = x.reshape(c, -1)
    take = min(n, c)

    if take == c:
        order = np.argsort(-flat, axis=0, kind="stable")
    else:
        # threshold = take-th largest; keep everything above it plus the
        # lowest-index ties needed to fill exactly `take` slots
        thresh = np.partition(flat, c - take, axis=0)[c - take]
        above = flat > thresh
        tied = flat == thresh
        need = take - above.sum(axis=0)
        tied &= np.cumsum(tied, axis=0) <= need
        pos, chan = np.nonzero((above | tied).T)
        cand = chan.reshape(-1, take).T
        vals = np.take_along_axis(flat, cand, axis=0)
        order = np.take_along_axis(cand, np.argsort(-vals, axis=0, kind="stable"), axis=0)

    values = np.zeros((n, flat.shape[1]), dtype=np.float32)
    indices = np.full((n, flat.shape[1]), -1, dtype=np.int32)
    values[:take] = np.take_along_axis(flat, order[:take], axis=0)
    indices[:take] = order[:take]
    return values.reshape((n,) + rest), indices.reshape((n,) + rest)


def topk_per_position(x, n: int) -> np.ndarray:
    x = as_tensor(x, "topk_per_position input")
    require_rank(x, 3, "topk_per_position input")
    values, _ = topk_with_indices(x, n)
    return values


# ═══════════════════════════════════════════════════════════════
# LOSS
# ═══════════════════════════════════════════════════════════════

def focal_loss(p, target, gamma: float = 2.0, alpha: float = 0.25) -> Tuple[float, np.ndarray]:
    """
    Mean focal loss over pixels and its gradient w.r.t. p.
    p_t = p on foreground, 1 - p on background; alpha_t likewise.
    """
    p = as_tensor(p, "focal_loss p")
    target = as_tensor(target, "focal_loss target")
    require_same_shape(p, target, "focal_loss")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not np.isin(target, (0.0, 1.0)).all():
        raise ValueError("focal_loss target must be binary {0, 1}")

    raw = p.astype(np.float64)
    pc = np.clip(raw, FOCAL_EPS, 1.0 - FOCAL_EPS)
    fg = target > 0.5
    pt = np.where(fg, pc, 1.0 - pc)
    at = np.where(fg, alpha, 1.0 - alpha)
    one_minus = 1.0 - pt
    log_pt = np.log(pt)

    loss = float(np.mean(-at * one_minus ** gamma * log_pt))

    # d/dpt of -a (1-pt)^g log pt
    if gamma == 0:
        d_pt = -at / pt
    else:
        d_pt = at * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus ** gamma / pt)
    d_p = np.where(fg, d_pt, -d_pt)
    # clamp is flat outside [eps, 1-eps]
    d_p = np.where((raw < FOCAL_EPS) | (raw > 1.0 - FOCAL_EPS), 0.0, d_p)
    return loss, (d_p / p.size).astype(np.float32)


# ═══════════════════════════════════════════════════════════════
# ELEMENTWISE PRIMITIVES
# ═══════════════════════════════════════════════════════════════

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x, "relu input"), np.float32(0))


def sigmoid(x) -> np.ndarray:
    return expit(as_tensor(x, "sigmoid input")).astype(np.float32)


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a, "add lhs"), as_tensor(b, "add rhs")
    require_same_shape(a, b, "add")
    return a + b


def multiply(a, b) -> np.ndarray:
    a, b = as_tensor(a, "multiply lhs"), as_tensor(b, "multiply rhs")
    require_same_shape(a, b, "multiply")
    return a * b


def concat_channels(parts: Sequence) -> np.ndarray:
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    arrs = [as_tensor(p, f"concat part {i}") for i, p in enumerate(parts)]
    for i, a in enumerate(arrs):
        require_rank(a, 3, f"concat part {i}")
        if a.shape[1:] != arrs[0].shape[1:]:
            raise ShapeError(f"concat_channels: spatial mismatch {arrs[0].shape} vs {a.shape}")
    return np.concatenate(arrs, axis=0)


def softmax_channels(x) -> np.ndarray:
    x = as_tensor(x, "softmax input")
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return (e / e.sum(axis=0, keepdims=True)).astype(np.float32)


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 8, 8)).astype(np.float32)
    spec = ConvSpec(rng.standard_normal((6, 4, 3, 3)).astype(np.float32), np.zeros(6, np.float32), 1, 1)
    print(f"\nconv2d: {x.shape} -> {conv2d(x, spec, threads=1).shape}")
    print(f"resize x2: {bilinear_resize(np.array([[[1.0, 3.0]]]), 2)[0, 0]}")
    print(f"top-2 of [3,1,2]: {topk_per_position(np.array([3.0, 1.0, 2.0]).reshape(3, 1, 1), 2).ravel()}")
