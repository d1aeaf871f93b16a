#!/usr/bin/env python3
"""
LSMVOS - Decoder
Fuses the four similarity maps, the previous mask and the stride-8 features,
upsamples through two refine stages (strides 4 and 2) and emits a per-object
probability map at the original frame resolution.
"""

from dataclasses import dataclass
from typing import Optional, Union
import logging

import numpy as np

from aic import Aic2dParams, aic2d, aic2d_layout
from encoder import CHANNELS, CropRecord, EncoderFeatures, crop_to
from matching import GateMask, SimilarityMap
from numerics import (FOCAL_EPS, ConvSpec, ShapeError, as_tensor, bilinear_resize,
                      concat_channels, conv2d, relu, require_rank, sigmoid)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("decoder")

FUSE_CHANNELS = 128

MapLike = Union[SimilarityMap, np.ndarray]


def _values(m: MapLike) -> np.ndarray:
    return m.values if isinstance(m, SimilarityMap) else m


@dataclass
class DecoderInput:
    g_fg: MapLike
    g_bg: MapLike
    l_fg: MapLike
    l_bg: MapLike
    prev_mask_s8: Union[GateMask, np.ndarray]
    feat_s8: np.ndarray

    def parts(self):
        mask = self.prev_mask_s8.values if isinstance(self.prev_mask_s8, GateMask) else self.prev_mask_s8
        return [_values(self.g_fg), _values(self.g_bg), _values(self.l_fg), _values(self.l_bg),
                mask, self.feat_s8]

    @property
    def channels(self) -> int:
        return sum(np.shape(p)[0] for p in self.parts())

    def stack(self) -> np.ndarray:
        parts = [as_tensor(p, name) for p, name in
                 zip(self.parts(), ("g_fg", "g_bg", "l_fg", "l_bg", "prev_mask_s8", "feat_s8"))]
        extents = {p.shape[1:] for p in parts if p.ndim == 3}
        if any(p.ndim != 3 for p in parts) or len(extents) != 1:
            raise ShapeError("DecoderInput: all inputs must be C×H×W at the same stride-8 extents, got "
                             + ", ".join(str(p.shape) for p in parts))
        return concat_channels(parts)


@dataclass(frozen=True)
class RefineParams:
    skip_aic: Aic2dParams
    proj: ConvSpec  # 1×1, previous channels → skip channels


@dataclass(frozen=True)
class DecoderParams:
    fuse_proj: ConvSpec
    fuse_aic: Aic2dParams
    refine4: RefineParams
    refine2: RefineParams
    head: ConvSpec

    @property
    def in_channels(self) -> int:
        return self.fuse_proj.kernel.shape[1]

    @classmethod
    def from_weights(cls, weights, prefix: str = "decoder") -> "DecoderParams":
        def conv(name: str, padding: int = 0) -> ConvSpec:
            return ConvSpec(weights.tensor(f"{prefix}.{name}.weight"),
                            weights.tensor(f"{prefix}.{name}.bias"), 1, padding)

        def stage(name: str) -> RefineParams:
            return RefineParams(Aic2dParams.from_weights(weights, f"{prefix}.{name}.skip"),
                                conv(f"{name}.proj"))

        return cls(
            fuse_proj=conv("fuse.proj"),
            fuse_aic=Aic2dParams.from_weights(weights, f"{prefix}.fuse.aic"),
            refine4=stage("refine4"),
            refine2=stage("refine2"),
            head=conv("head", 1),
        )


def decoder_in_channels(n: int) -> int:
    """4 similarity maps of n channels + previous mask + stride-8 features."""
    return 4 * n + 1 + CHANNELS[-1]


def decoder_layout(n: int = 256, prefix: str = "decoder") -> list:
    from dataio import LayoutEntry

    def conv(name: str, c_out: int, c_in: int, size: int = 1) -> list:
        fan_in = c_in * size * size
        return [LayoutEntry(f"{prefix}.{name}.weight", (c_out, c_in, size, size), fan_in, "weight"),
                LayoutEntry(f"{prefix}.{name}.bias", (c_out,), fan_in, "bias")]

    c_in = decoder_in_channels(n)
    return (conv("fuse.proj", FUSE_CHANNELS, c_in)
            + aic2d_layout(f"{prefix}.fuse.aic", FUSE_CHANNELS, FUSE_CHANNELS)
            + aic2d_layout(f"{prefix}.refine4.skip", CHANNELS[1], CHANNELS[1])
            + conv("refine4.proj", CHANNELS[1], FUSE_CHANNELS)
            + aic2d_layout(f"{prefix}.refine2.skip", CHANNELS[0], CHANNELS[0])
            + conv("refine2.proj", CHANNELS[0], CHANNELS[1])
            + conv("head", 1, CHANNELS[0], 3))


# ═══════════════════════════════════════════════════════════════
# STAGES
# ═══════════════════════════════════════════════════════════════

def fuse(inp: DecoderInput, params: DecoderParams) -> np.ndarray:
    x = inp.stack()
    if x.shape[0] != params.in_channels:
        raise ShapeError(f"fuse: inputs carry {x.shape[0]} channels, params expect {params.in_channels}")
    return aic2d(relu(conv2d(x, params.fuse_proj)), params.fuse_aic)


def refine(skip, prev, params: RefineParams) -> np.ndarray:
    """aic2d(skip) + bilinear_x2(proj(prev)); skip must be exactly twice prev's extents."""
    skip = as_tensor(skip, "refine skip")
    prev = as_tensor(prev, "refine prev")
    require_rank(skip, 3, "refine skip")
    require_rank(prev, 3, "refine prev")
    if skip.shape[1] != 2 * prev.shape[1] or skip.shape[2] != 2 * prev.shape[2]:
        raise ShapeError(f"refine: skip {skip.shape} must have twice the extents of prev {prev.shape}")
    up = bilinear_resize(conv2d(prev, params.proj), 2)
    return aic2d(skip, params.skip_aic) + up


def segment_head(x, crop: Optional[CropRecord], params: DecoderParams) -> np.ndarray:
    """3×3 conv → sigmoid at stride 2, ×2 bilinear, crop. Returns 1×H₀×W₀ in (0, 1)."""
    if crop is None:
        raise ValueError("segment_head: crop record is required")
    x = as_tensor(x, "segment_head input")
    require_rank(x, 3, "segment_head input")
    prob = bilinear_resize(sigmoid(conv2d(x, params.head)), 2)
    # float32 sigmoid saturates to exactly 0/1 for large logits
    return np.clip(crop_to(prob, crop), FOCAL_EPS, 1.0 - FOCAL_EPS).astype(np.float32)


def decode(inp: DecoderInput, feats: EncoderFeatures, crop: Optional[CropRecord],
           params: DecoderParams) -> np.ndarray:
    x = fuse(inp, params)
    x = refine(feats.s4, x, params.refine4)
    x = refine(feats.s2, x, params.refine2)
    return segment_head(x, crop, params)
