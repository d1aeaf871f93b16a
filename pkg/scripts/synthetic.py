#!/usr/bin/env python3
"""
LSMVOS - Synthetic Clips
Procedural moving textured squares with exact per-frame label maps, for
tests and benchmarks that must not depend on a dataset download.
"""

import os
from dataclasses import dataclass
from typing import List
import logging

import numpy as np

from dataio import write_frame, write_label_map

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("synthetic")


@dataclass
class SyntheticClip:
    frames: List[np.ndarray]   # H×W×3 uint8
    labels: List[np.ndarray]   # H×W uint8, ids 1..K, later objects drawn on top

    @property
    def resolution(self):
        h, w = self.frames[0].shape[:2]
        return w, h

    @property
    def object_ids(self) -> List[int]:
        return sorted(int(i) for i in np.unique(self.labels[0]) if i != 0)


def make_clip(width: int = 64, height: int = 48, frames: int = 5, objects: int = 2,
              seed: int = 0, side: int = 0, speed: int = 2) -> SyntheticClip:
    """
    Squares of side `side` (default: a quarter of the short edge) with their
    own random texture, translating at `speed` px/frame and bouncing off the
    borders, over a low-contrast textured background.
    """
    if frames < 1 or objects < 1:
        raise ValueError(f"need frames >= 1 and objects >= 1, got {frames}/{objects}")
    if objects > 255:
        raise ValueError(f"at most 255 objects fit an indexed label map, got {objects}")
    # frame 0 places each square in its own grid cell so every id is visible
    grid = int(np.ceil(np.sqrt(objects)))
    cell_h, cell_w = height // grid, width // grid
    side = side or min(max(4, min(width, height) // 4), cell_h, cell_w)
    if side < 1 or side > min(cell_h, cell_w):
        raise ValueError(f"{objects} squares of side {side} do not fit a {width}x{height} frame")

    rng = np.random.default_rng(seed)
    background = rng.integers(60, 110, size=(height, width, 3), dtype=np.uint8)
    textures = [rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8) for _ in range(objects)]
    cells = np.array([divmod(o, grid) for o in range(objects)])
    pos = np.stack([cells[:, 0] * cell_h + rng.integers(0, cell_h - side + 1, objects),
                    cells[:, 1] * cell_w + rng.integers(0, cell_w - side + 1, objects)], axis=1)
    vel = rng.choice([-speed, speed], size=(objects, 2)) if speed else np.zeros((objects, 2), int)
    limits = np.array([height - side, width - side])

    out_frames, out_labels = [], []
    for _ in range(frames):
        frame = background.copy()
        label = np.zeros((height, width), dtype=np.uint8)
        for o in range(objects):
            y, x = pos[o]
            frame[y:y + side, x:x + side] = textures[o]
            label[y:y + side, x:x + side] = o + 1
        out_frames.append(frame)
        out_labels.append(label)

        pos = pos + vel
        over = (pos < 0) | (pos > limits)
        vel = np.where(over, -vel, vel)
        pos = np.clip(pos, 0, limits)

    return SyntheticClip(out_frames, out_labels)


def write_davis_fixture(root: str, clip: SyntheticClip, name: str = "squares",
                        image_set: str = "480p", annotate_all: bool = False) -> str:
    """Write the clip in DAVIS layout (PNG frames); returns the sequence name."""
    frame_dir = os.path.join(root, "JPEGImages", image_set, name)
    anno_dir = os.path.join(root, "Annotations", image_set, name)
    for t, (frame, label) in enumerate(zip(clip.frames, clip.labels)):
        write_frame(os.path.join(frame_dir, f"{t:05d}.png"), frame)
        if t == 0 or annotate_all:
            write_label_map(os.path.join(anno_dir, f"{t:05d}.png"), label)
    logger.info(f"Fixture written | {frame_dir} | {len(clip.frames)} frames")
    return name


if __name__ == "__main__":
    clip = make_clip()
    print(f"\nClip: {len(clip.frames)} frames at {clip.resolution}, objects {clip.object_ids}")
