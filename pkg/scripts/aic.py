#!/usr/bin/env python3
"""
LSMVOS - 2D Anisotropic Convolution (AIC)
Axis-decomposed 1D convolutions with per-position soft kernel-size selection
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple
import logging

import numpy as np

from numerics import (ConvSpec, ShapeError, as_tensor, conv2d, require_rank,
                      softmax_channels)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("aic")

KERNEL_SIZES = (1, 3, 5)


class Axis(Enum):
    WIDTH = "width"
    HEIGHT = "height"


@dataclass(frozen=True)
class AxisPass:
    axis: Axis
    kernels: Tuple[np.ndarray, ...]   # one C_out×C_in×k per size in KERNEL_SIZES
    bias: np.ndarray                  # C_out
    mod_weight: np.ndarray            # S×C_in (1×1 modulation conv)
    mod_bias: np.ndarray              # S

    def __post_init__(self):
        if len(self.kernels) != len(KERNEL_SIZES):
            raise ShapeError(f"{self.axis.value} pass: expected {len(KERNEL_SIZES)} kernels, "
                             f"got {len(self.kernels)}")
        kernels = tuple(as_tensor(k, f"{self.axis.value} kernel") for k in self.kernels)
        c_out, c_in = kernels[0].shape[:2]
        for size, k in zip(KERNEL_SIZES, kernels):
            if k.shape != (c_out, c_in, size):
                raise ShapeError(f"{self.axis.value} pass: kernel of size {size} has shape "
                                 f"{k.shape}, expected {(c_out, c_in, size)}")
        bias = as_tensor(self.bias, "aic bias")
        mod_weight = as_tensor(self.mod_weight, "aic modulation weight")
        mod_bias = as_tensor(self.mod_bias, "aic modulation bias")
        if bias.shape != (c_out,):
            raise ShapeError(f"{self.axis.value} pass: bias {bias.shape}, expected ({c_out},)")
        if mod_weight.shape != (len(KERNEL_SIZES), c_in) or mod_bias.shape != (len(KERNEL_SIZES),):
            raise ShapeError(f"{self.axis.value} pass: modulation {mod_weight.shape}/{mod_bias.shape}, "
                             f"expected ({len(KERNEL_SIZES)}, {c_in})/({len(KERNEL_SIZES)},)")
        object.__setattr__(self, 'kernels', kernels)
        object.__setattr__(self, 'bias', bias)
        object.__setattr__(self, 'mod_weight', mod_weight)
        object.__setattr__(self, 'mod_bias', mod_bias)

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels[0].shape[0]

    def conv_specs(self) -> List[ConvSpec]:
        zero = np.zeros(self.out_channels, dtype=np.float32)
        specs = []
        for size, k in zip(KERNEL_SIZES, self.kernels):
            half = size // 2
            if self.axis is Axis.WIDTH:
                specs.append(ConvSpec(k[:, :, None, :], zero, 1, (0, half)))
            else:
                specs.append(ConvSpec(k[:, :, :, None], zero, 1, (half, 0)))
        return specs

    def modulation_spec(self) -> ConvSpec:
        return ConvSpec(self.mod_weight[:, :, None, None], self.mod_bias)


@dataclass(frozen=True)
class Aic2dParams:
    width: AxisPass
    height: AxisPass

    def __post_init__(self):
        if self.width.axis is not Axis.WIDTH or self.height.axis is not Axis.HEIGHT:
            raise ShapeError("Aic2dParams: passes must be (width, height) in that order")
        if self.height.in_channels != self.width.out_channels:
            raise ShapeError(f"Aic2dParams: height pass takes {self.height.in_channels} channels, "
                             f"width pass yields {self.width.out_channels}")

    @property
    def in_channels(self) -> int:
        return self.width.in_channels

    @property
    def out_channels(self) -> int:
        return self.height.out_channels

    @classmethod
    def from_weights(cls, weights, prefix: str) -> "Aic2dParams":
        passes = []
        for axis in (Axis.WIDTH, Axis.HEIGHT):
            p = f"{prefix}.{axis.value}"
            passes.append(AxisPass(
                axis=axis,
                kernels=tuple(weights.tensor(f"{p}.k{size}") for size in KERNEL_SIZES),
                bias=weights.tensor(f"{p}.bias"),
                mod_weight=weights.tensor(f"{p}.mod_weight"),
                mod_bias=weights.tensor(f"{p}.mod_bias"),
            ))
        return cls(*passes)


def aic2d_layout(prefix: str, c_in: int, c_out: int) -> list:
    from dataio import LayoutEntry
    entries = []
    for axis, cin in ((Axis.WIDTH, c_in), (Axis.HEIGHT, c_out)):
        p = f"{prefix}.{axis.value}"
        for size in KERNEL_SIZES:
            entries.append(LayoutEntry(f"{p}.k{size}", (c_out, cin, size), cin * size, "weight"))
        entries.append(LayoutEntry(f"{p}.bias", (c_out,), cin, "bias"))
        entries.append(LayoutEntry(f"{p}.mod_weight", (len(KERNEL_SIZES), cin), cin, "weight"))
        entries.append(LayoutEntry(f"{p}.mod_bias", (len(KERNEL_SIZES),), cin, "bias"))
    return entries


def axis_pass(x: np.ndarray, p: AxisPass, return_weights: bool = False):
    """One axis: blend of the 1D convolutions by softmax selection weights."""
    weights = softmax_channels(conv2d(x, p.modulation_spec()))
    out = np.zeros((p.out_channels,) + x.shape[1:], dtype=np.float32)
    for s, spec in enumerate(p.conv_specs()):
        out += weights[s:s + 1] * conv2d(x, spec)
    out += p.bias[:, None, None]
    if return_weights:
        return out, weights
    return out


def aic2d(x, params: Aic2dParams) -> np.ndarray:
    """Width pass then height pass; spatial extents preserved."""
    x = as_tensor(x, "aic2d input")
    require_rank(x, 3, "aic2d input")
    if x.shape[0] != params.in_channels:
        raise ShapeError(f"aic2d: input {x.shape} has {x.shape[0]} channels, "
                         f"params expect {params.in_channels}")
    return axis_pass(axis_pass(x, params.width), params.height)
