#!/usr/bin/env python3
"""
LSMVOS - Selftest
Oracle-equivalence, constant and gradient checks with a pass/fail table.
"""

import time
from dataclasses import dataclass
from typing import Callable, List
import logging

import numpy as np

from encoder import STRIDE, pad_to_multiple
from matching import (GateMask, MatchConfig, Polarity, downsample_mask, long_term_match,
                      long_term_match_backward, short_term_match, short_term_match_backward)
from numerics import focal_loss, l2_normalize_channels
from oracles import brute_long_term, brute_short_term, check_gradient
from settings import get_settings

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("selftest")

ORACLE_TOL = 1e-5
GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _features(rng, c, h, w, scale=None):
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    return x * np.float32(scale) if scale else l2_normalize_channels(x)


def _gate(rng, h, w):
    return GateMask(rng.uniform(0.0, 1.0, (1, h, w)).astype(np.float32))


# ═══════════════════════════════════════════════════════════════
# SUITES
# ═══════════════════════════════════════════════════════════════

def check_short_oracle(seed: int = 0, instances: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        c = int(rng.choice([8, 16]))
        h, w = (int(v) for v in rng.integers(8, 17, 2))
        k = int(rng.integers(0, 4))
        n = int(rng.integers(1, (2 * k + 1) ** 2 + 1))
        cur, prev, gate = _features(rng, c, h, w), _features(rng, c, h, w), _gate(rng, h, w)
        polarity = Polarity.FOREGROUND if rng.random() < 0.5 else Polarity.BACKGROUND
        got = short_term_match(cur, prev, gate, MatchConfig(k, n), polarity, threads=1)
        want, _ = brute_short_term(cur, prev, gate.for_polarity(polarity), k, n)
        worst = max(worst, float(np.max(np.abs(got.values - want))))
    return CheckResult("short-term vs oracle", worst < ORACLE_TOL, f"{instances} instances, max |d|={worst:.2e}")


def check_long_oracle(seed: int = 1, instances: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        c = int(rng.choice([8, 16]))
        h, w, rh, rw = (int(v) for v in rng.integers(8, 17, 4))
        n = int(rng.integers(1, rh * rw + 1))
        cur, ref, gate = _features(rng, c, h, w), _features(rng, c, rh, rw), _gate(rng, rh, rw)
        polarity = Polarity.FOREGROUND if rng.random() < 0.5 else Polarity.BACKGROUND
        got = long_term_match(cur, ref, gate, MatchConfig(0, n), polarity, threads=1)
        want, _ = brute_long_term(cur, ref, gate.for_polarity(polarity), n)
        worst = max(worst, float(np.max(np.abs(got.values - want))))
    return CheckResult("long-term vs oracle", worst < ORACLE_TOL, f"{instances} instances, max |d|={worst:.2e}")


def check_window_global(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    cur, prev = _features(rng, 16, 12, 12), _features(rng, 16, 12, 12)
    ones = GateMask(np.ones((1, 12, 12), np.float32))
    n = 144
    short = short_term_match(cur, prev, ones, MatchConfig(12, n), threads=1)
    long = long_term_match(cur, prev, ones, MatchConfig(12, n), threads=1)
    same = np.array_equal(short.values, long.values)
    return CheckResult("window k=12 == global", same, "12x12 features, gate 1, n=144")


def check_constants() -> CheckResult:
    cfg = MatchConfig()
    frame = np.zeros((480, 854), dtype=np.float32)
    padded, crop = pad_to_multiple(frame)
    gate = downsample_mask(padded[None], STRIDE)
    ok = cfg.window_candidates == 289 and cfg.n == 256 and gate.shape == (60, 107) and \
        (crop.width, crop.height) == (854, 480)
    return CheckResult("constants", ok, f"window={cfg.window_candidates} n={cfg.n} "
                                         f"features={gate.shape[1]}x{gate.shape[0]}")


def _match_grad_check(seed: int, long: bool) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = MatchConfig(k=2, n=6, similarity="dot")
    c, h, w = 8, 6, 6
    cur, other = _features(rng, c, h, w, 1.0), _features(rng, c, h, w, 1.0)
    gate = _gate(rng, h, w)
    match = long_term_match if long else short_term_match
    backward = long_term_match_backward if long else short_term_match_backward
    sim = match(cur, other, gate, cfg, threads=1)
    upstream = rng.standard_normal(sim.values.shape).astype(np.float32)
    g_cur, g_other = backward(upstream, sim, cfg)

    def loss(a, b):
        m = match(a, b, gate, cfg, threads=1)
        return float(np.sum(upstream.astype(np.float64) * m.values)), m.indices

    r_cur = check_gradient(lambda x: loss(x, other), cur, g_cur, rng)
    r_other = check_gradient(lambda x: loss(cur, x), other, g_other, rng)
    worst = max(r_cur.rel_error, r_other.rel_error)
    ok = r_cur.passed(GRAD_TOL) and r_other.passed(GRAD_TOL)
    name = "long-term backward" if long else "short-term backward"
    return CheckResult(name, ok, f"rel err {worst:.2e} over {r_cur.checked}+{r_other.checked} coords")


def check_short_backward(seed: int = 3) -> CheckResult:
    return _match_grad_check(seed, long=False)


def check_long_backward(seed: int = 4) -> CheckResult:
    return _match_grad_check(seed, long=True)


def check_focal_gradient(seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.1, 0.9, (1, 16, 16)).astype(np.float32)
    target = (rng.random((1, 16, 16)) < 0.3).astype(np.float32)
    s = get_settings()
    _, grad = focal_loss(p, target, s.gamma, s.alpha)
    r = check_gradient(lambda x: (focal_loss(x, target, s.gamma, s.alpha)[0], None), p, grad, rng)
    return CheckResult("focal loss gradient", r.passed(GRAD_TOL), f"rel err {r.rel_error:.2e} over {r.checked} coords")


SUITES: List[Callable[[], CheckResult]] = [
    check_constants,
    check_short_oracle,
    check_long_oracle,
    check_window_global,
    check_short_backward,
    check_long_backward,
    check_focal_gradient,
]


def run_selftest() -> List[CheckResult]:
    results = []
    for suite in SUITES:
        start = time.perf_counter()
        try:
            result = suite()
        except ValueError as e:
            result = CheckResult(suite.__name__, False, f"error: {e}")
        result.seconds = time.perf_counter() - start
        logger.info(f"Check {result.name} | {'PASS' if result.passed else 'FAIL'} | {result.seconds:.1f}s")
        results.append(result)
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'CHECK':<{width}}  RESULT  TIME     DETAIL", "-" * (width + 40)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:6.2f}s  {r.detail}")
    passed = sum(r.passed for r in results)
    lines.append(f"\n{passed}/{len(results)} checks passed")
    return "\n".join(lines)


if __name__ == "__main__":
    print(format_table(run_selftest()))
