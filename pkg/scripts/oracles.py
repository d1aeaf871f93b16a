#!/usr/bin/env python3
"""
LSMVOS - Reference Oracles
Slow, loop-based reference implementations and a finite-difference
gradient checker. Shared by the test suite and the selftest command.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple
import logging

import numpy as np

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("oracles")


def brute_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                 stride: int = 1, padding: Tuple[int, int] = (0, 0)) -> np.ndarray:
    c, h, w = x.shape
    k, _, kh, kw = kernel.shape
    ph, pw = padding
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, ph:ph + h, pw:pw + w] = x
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    out = np.zeros((k, ho, wo), dtype=np.float64)
    for o in range(k):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[o, i, j] = np.sum(patch * kernel[o]) + bias[o]
    return out.astype(np.float32)


def _select(candidates, n: int):
    """candidates: list of (score, id); highest score first, lower id on ties."""
    ranked = sorted(candidates, key=lambda c: (-c[0], c[1]))[:n]
    values = [c[0] for c in ranked] + [0.0] * (n - len(ranked))
    ids = [c[1] for c in ranked] + [-1] * (n - len(ranked))
    return values, ids


def brute_short_term(cur: np.ndarray, prev: np.ndarray, gate: np.ndarray, k: int, n: int):
    """
    Per pixel: every in-image candidate within Chebyshev distance k, scored
    dot(cur, prev) * gate at the candidate. gate is H×W with polarity applied.
    """
    _, h, w = cur.shape
    values = np.zeros((n, h, w), dtype=np.float32)
    ids = np.zeros((n, h, w), dtype=np.int32)
    for i in range(h):
        for j in range(w):
            cands, cid = [], 0
            for dy in range(-k, k + 1):
                for dx in range(-k, k + 1):
                    y, x = i + dy, j + dx
                    if 0 <= y < h and 0 <= x < w:
                        dot = np.float32(np.dot(cur[:, i, j].astype(np.float64),
                                                prev[:, y, x].astype(np.float64)))
                        cands.append((float(dot * np.float32(gate[y, x])), cid))
                    cid += 1
            v, c = _select(cands, n)
            values[:, i, j] = v
            ids[:, i, j] = c
    return values, ids


def brute_long_term(cur: np.ndarray, ref: np.ndarray, gate: np.ndarray, n: int):
    """Per pixel: every reference position, scored dot(cur, ref) * gate."""
    c, h, w = cur.shape
    ref_flat = ref.reshape(c, -1).astype(np.float64)
    gate_flat = gate.reshape(-1)
    values = np.zeros((n, h, w), dtype=np.float32)
    ids = np.zeros((n, h, w), dtype=np.int32)
    for i in range(h):
        for j in range(w):
            v = cur[:, i, j].astype(np.float64)
            cands = [(float(np.float32(np.dot(v, ref_flat[:, q])) * np.float32(gate_flat[q])), q)
                     for q in range(ref_flat.shape[1])]
            vals, cid = _select(cands, n)
            values[:, i, j] = vals
            ids[:, i, j] = cid
    return values, ids


@dataclass
class GradCheck:
    rel_error: float
    checked: int
    skipped: int

    def passed(self, tol: float = 1e-3, minimum: int = 100) -> bool:
        return self.checked >= minimum and self.rel_error < tol


def check_gradient(forward: Callable[[np.ndarray], Tuple[float, Optional[np.ndarray]]],
                   x: np.ndarray, analytic: np.ndarray, rng: np.random.Generator,
                   count: int = 100, h: float = 1e-3, max_tries: int = 2000) -> GradCheck:
    """
    Central differences at `count` random coordinates of x.

    forward(x) returns (loss, signature). Coordinates whose perturbation
    changes the signature (e.g. the selected top-N indices) are skipped, since
    the loss is not differentiable there. The error is
    ||analytic - numeric|| / max(||analytic||, ||numeric||) over the sample.
    """
    _, base_sig = forward(x)
    num, ana = [], []
    skipped = 0
    for _ in range(max_tries):
        if len(num) >= count:
            break
        idx = tuple(int(rng.integers(0, s)) for s in x.shape)
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        f_plus, sig_plus = forward(plus)
        f_minus, sig_minus = forward(minus)
        if base_sig is not None and not (np.array_equal(sig_plus, base_sig)
                                         and np.array_equal(sig_minus, base_sig)):
            skipped += 1
            continue
        step = float(plus[idx]) - float(minus[idx])
        num.append((f_plus - f_minus) / step)
        ana.append(float(analytic[idx]))
    num, ana = np.asarray(num), np.asarray(ana)
    scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-30)
    return GradCheck(float(np.linalg.norm(num - ana) / scale), len(num), skipped)
