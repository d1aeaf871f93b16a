#!/usr/bin/env python3
"""
LSMVOS - Encoder
Frame padding and normalization, a compact 3-stage residual encoder
(strides 2/4/8, channels 32/64/128) and the global/local AIC branches.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple
import logging

import numpy as np

from aic import Aic2dParams, aic2d, aic2d_layout
from numerics import (ConvSpec, ShapeError, as_tensor, conv2d, l2_normalize_channels,
                      relu, require_rank)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("encoder")

STRIDE = 8
CHANNELS = (32, 64, 128)
STAGE_NAMES = ("s2", "s4", "s8")
MATCH_CHANNELS = 128

RGB_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
RGB_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class CropRecord:
    width: int
    height: int


@dataclass
class EncoderFeatures:
    s2: np.ndarray
    s4: np.ndarray
    s8: np.ndarray


@dataclass
class MatchFeatures:
    global_feat: np.ndarray
    local_feat: np.ndarray


# ═══════════════════════════════════════════════════════════════
# INPUT PREPARATION
# ═══════════════════════════════════════════════════════════════

def pad_to_multiple(frame: np.ndarray, multiple: int = STRIDE) -> Tuple[np.ndarray, CropRecord]:
    """Zero-pad right/bottom of an H×W or H×W×C array to multiples of `multiple`."""
    frame = np.asarray(frame)
    if frame.ndim not in (2, 3):
        raise ShapeError(f"pad_to_multiple: expected H×W or H×W×C, got shape {frame.shape}")
    h, w = frame.shape[:2]
    if h < multiple or w < multiple:
        raise ShapeError(f"pad_to_multiple: image {w}x{h} is smaller than {multiple}x{multiple}")
    pad_h, pad_w = -h % multiple, -w % multiple
    crop = CropRecord(width=w, height=h)
    if pad_h == 0 and pad_w == 0:
        return frame, crop
    widths = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (frame.ndim - 2)
    return np.pad(frame, widths), crop


def crop_to(x: np.ndarray, crop: Optional[CropRecord]) -> np.ndarray:
    """Undo pad_to_multiple on a C×H×W or H×W array."""
    if crop is None:
        raise ValueError("crop record is required")
    if x.shape[-2] < crop.height or x.shape[-1] < crop.width:
        raise ShapeError(f"crop_to: array {x.shape} smaller than crop {crop.width}x{crop.height}")
    return x[..., :crop.height, :crop.width]


def normalize_frame(frame: np.ndarray) -> np.ndarray:
    """H×W×3 uint8 (or [0,1] float) → 3×H×W mean/std normalized float32."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"normalize_frame: expected H×W×3, got shape {frame.shape}")
    x = frame.astype(np.float32)
    if frame.dtype == np.uint8:
        x /= 255.0
    x = (x - RGB_MEAN) / RGB_STD
    return np.ascontiguousarray(x.transpose(2, 0, 1), dtype=np.float32)


def prepare_frame(frame: np.ndarray) -> Tuple[np.ndarray, CropRecord]:
    padded, crop = pad_to_multiple(frame)
    return normalize_frame(padded), crop


# ═══════════════════════════════════════════════════════════════
# ENCODER
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class StageParams:
    down: ConvSpec   # 3×3 stride 2
    res1: ConvSpec   # 3×3
    res2: ConvSpec   # 3×3


@dataclass(frozen=True)
class EncoderParams:
    stages: Tuple[StageParams, ...]

    @classmethod
    def from_weights(cls, weights, prefix: str = "encoder") -> "EncoderParams":
        stages = []
        for name in STAGE_NAMES:
            p = f"{prefix}.{name}"
            stages.append(StageParams(
                down=ConvSpec(weights.tensor(f"{p}.down.weight"), weights.tensor(f"{p}.down.bias"), 2, 1),
                res1=ConvSpec(weights.tensor(f"{p}.res1.weight"), weights.tensor(f"{p}.res1.bias"), 1, 1),
                res2=ConvSpec(weights.tensor(f"{p}.res2.weight"), weights.tensor(f"{p}.res2.bias"), 1, 1),
            ))
        return cls(tuple(stages))


@dataclass(frozen=True)
class BranchParams:
    global_aic: Aic2dParams
    local_aic: Aic2dParams

    @classmethod
    def from_weights(cls, weights, prefix: str = "branch") -> "BranchParams":
        return cls(Aic2dParams.from_weights(weights, f"{prefix}.global"),
                   Aic2dParams.from_weights(weights, f"{prefix}.local"))


def encoder_layout(prefix: str = "encoder") -> list:
    from dataio import LayoutEntry
    entries, c_in = [], 3
    for name, c_out in zip(STAGE_NAMES, CHANNELS):
        for conv, cin in (("down", c_in), ("res1", c_out), ("res2", c_out)):
            base = f"{prefix}.{name}.{conv}"
            entries.append(LayoutEntry(f"{base}.weight", (c_out, cin, 3, 3), cin * 9, "weight"))
            entries.append(LayoutEntry(f"{base}.bias", (c_out,), cin * 9, "bias"))
        c_in = c_out
    return entries


def branch_layout(prefix: str = "branch") -> list:
    return (aic2d_layout(f"{prefix}.global", CHANNELS[-1], MATCH_CHANNELS)
            + aic2d_layout(f"{prefix}.local", CHANNELS[-1], MATCH_CHANNELS))


def _stage(x: np.ndarray, p: StageParams) -> np.ndarray:
    y = relu(conv2d(x, p.down))
    r = conv2d(relu(conv2d(y, p.res1)), p.res2)
    return relu(y + r)


def encode(x, params: EncoderParams) -> EncoderFeatures:
    """Normalized padded 3×H×W frame → features at strides 2, 4, 8."""
    x = as_tensor(x, "encode input")
    require_rank(x, 3, "encode input")
    _, h, w = x.shape
    if x.shape[0] != 3:
        raise ShapeError(f"encode: expected 3 channels, got shape {x.shape}")
    if h % STRIDE or w % STRIDE:
        raise ShapeError(f"encode: input {w}x{h} is not padded to a multiple of {STRIDE}")
    feats = []
    for stage in params.stages:
        x = _stage(x, stage)
        feats.append(x)
    return EncoderFeatures(*feats)


def branch(f: EncoderFeatures, params: BranchParams) -> MatchFeatures:
    """Two independent AIC blocks on s8, each L2-normalized per position."""
    s8 = as_tensor(f.s8, "branch input")
    require_rank(s8, 3, "branch input")
    return MatchFeatures(
        global_feat=l2_normalize_channels(aic2d(s8, params.global_aic)),
        local_feat=l2_normalize_channels(aic2d(s8, params.local_aic)),
    )
