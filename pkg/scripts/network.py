#!/usr/bin/env python3
"""
LSMVOS - Network
Parameter layout of the whole model and assembly from a weights container.
"""

from dataclasses import dataclass
from typing import List
import logging

from decoder import DecoderParams, decoder_in_channels, decoder_layout
from encoder import BranchParams, EncoderParams, branch_layout, encoder_layout

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("network")

DEFAULT_N = 256


def full_layout(n: int = DEFAULT_N) -> List:
    """Every named tensor in storage order; n is the similarity channel count."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return encoder_layout() + branch_layout() + decoder_layout(n)


@dataclass(frozen=True)
class Network:
    encoder: EncoderParams
    branch: BranchParams
    decoder: DecoderParams

    @property
    def n(self) -> int:
        """Similarity channels the decoder was built for."""
        return (self.decoder.in_channels - decoder_in_channels(0)) // 4

    @classmethod
    def from_weights(cls, weights) -> "Network":
        if "decoder.fuse.proj.weight" not in weights:
            raise ValueError("weights container has no decoder.fuse.proj.weight entry")
        c_in = weights.shape("decoder.fuse.proj.weight")[1]
        n, rem = divmod(c_in - decoder_in_channels(0), 4)
        if rem or n < 1:
            raise ValueError(f"decoder input width {c_in} does not correspond to any similarity channel count")
        weights.validate_layout(full_layout(n))
        net = cls(EncoderParams.from_weights(weights),
                  BranchParams.from_weights(weights),
                  DecoderParams.from_weights(weights))
        logger.info(f"Network assembled | n={n} | {len(weights)} tensors")
        return net


if __name__ == "__main__":
    layout = full_layout()
    total = sum(1 for _ in layout)
    params = 0
    for e in layout:
        size = 1
        for s in e.shape:
            size *= s
        params += size
    print(f"\nLayout: {total} tensors, {params:,} parameters")
