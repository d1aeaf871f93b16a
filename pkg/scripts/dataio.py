#!/usr/bin/env python3
"""
LSMVOS - Data IO
DAVIS-layout sequences, indexed-palette label maps, and the weights container.

Weights file layout (little-endian):
    b"LSMW" | u32 version | u64 blob length | u64 checksum
    | u64 manifest length | manifest (UTF-8 JSON) | blob (float32)
The checksum is the 8-byte BLAKE2b digest of the blob read as a u64.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np
from PIL import Image

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("dataio")

MAGIC = b"LSMW"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQQ")
LENGTH = struct.Struct("<Q")

FRAME_EXTENSIONS = (".jpg", ".jpeg", ".png", ".ppm")


class SequenceError(ValueError):
    """Dataset directory is missing or inconsistent."""


class WeightsFormatError(ValueError):
    """Weights file is not a valid container."""


class ChecksumError(WeightsFormatError):
    """Weights blob does not match its recorded length or checksum."""


# ═══════════════════════════════════════════════════════════════
# WEIGHTS CONTAINER
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: Tuple[int, ...]
    fan_in: int
    kind: str  # "weight" or "bias"


class WeightsContainer:
    """Ordered named float32 tensors backed by one contiguous blob on disk."""

    def __init__(self):
        self._tensors: Dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._tensors:
            raise ValueError(f"Duplicate weights entry: {name}")
        arr = np.array(value, dtype=np.float32, order="C")
        arr.setflags(write=False)
        self._tensors[name] = arr

    def tensor(self, name: str, shape: Optional[Sequence[int]] = None) -> np.ndarray:
        if name not in self._tensors:
            raise KeyError(f"Weights entry not found: {name}")
        arr = self._tensors[name]
        if shape is not None and arr.shape != tuple(shape):
            raise ValueError(f"Weights entry {name} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def shape(self, name: str) -> Tuple[int, ...]:
        return self.tensor(name).shape

    def names(self) -> List[str]:
        return list(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def manifest(self) -> List[Dict]:
        entries, offset = [], 0
        for name, arr in self._tensors.items():
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 4
        return entries

    def blob(self) -> bytes:
        return b"".join(arr.astype("<f4").tobytes() for arr in self._tensors.values())

    def validate_layout(self, layout: Iterable[LayoutEntry]) -> None:
        for entry in layout:
            self.tensor(entry.name, entry.shape)


def _checksum(blob: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def save_weights(path: str, weights: WeightsContainer) -> None:
    blob = weights.blob()
    manifest = json.dumps({"entries": weights.manifest()}).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, len(blob), _checksum(blob)))
        f.write(LENGTH.pack(len(manifest)))
        f.write(manifest)
        f.write(blob)
    logger.info(f"Saved weights | {path} | {len(weights)} tensors | {len(blob)} bytes")


def load_weights(path: str) -> WeightsContainer:
    with open(path, "rb") as f:
        data = f.read()

    if len(data) < HEADER.size + LENGTH.size:
        raise ChecksumError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, blob_len, checksum = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")

    (manifest_len,) = LENGTH.unpack_from(data, HEADER.size)
    start = HEADER.size + LENGTH.size
    if len(data) < start + manifest_len:
        raise ChecksumError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightsFormatError(f"{path}: unreadable manifest: {e}")

    blob = data[start + manifest_len:]
    if len(blob) != blob_len:
        raise ChecksumError(f"{path}: blob is {len(blob)} bytes, header says {blob_len}")
    if _checksum(blob) != checksum:
        raise ChecksumError(f"{path}: checksum mismatch")

    weights = WeightsContainer()
    end_prev = 0
    for entry in manifest.get("entries", []):
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        nbytes = int(np.prod(shape)) * 4
        if offset < end_prev or offset + nbytes > len(blob):
            raise WeightsFormatError(f"{path}: entry {entry['name']} at offset {offset} "
                                     f"overlaps or exceeds the blob")
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        weights.add(entry["name"], arr)
        end_prev = offset + nbytes
    logger.info(f"Loaded weights | {path} | {len(weights)} tensors")
    return weights


def seeded_init(seed: int, layout: Optional[Sequence[LayoutEntry]] = None) -> WeightsContainer:
    """
    Deterministic weights: numpy PCG64 (default_rng(seed)), weights drawn
    N(0, 1) * 1/sqrt(fan_in) in layout order, biases zero.
    """
    if layout is None:
        from network import full_layout
        layout = full_layout()
    rng = np.random.default_rng(seed)
    weights = WeightsContainer()
    for entry in layout:
        if entry.kind == "bias":
            weights.add(entry.name, np.zeros(entry.shape, dtype=np.float32))
        else:
            scale = np.float32(1.0 / np.sqrt(entry.fan_in))
            weights.add(entry.name, rng.standard_normal(entry.shape, dtype=np.float32) * scale)
    return weights


# ═══════════════════════════════════════════════════════════════
# FRAMES AND LABEL MAPS
# ═══════════════════════════════════════════════════════════════

def davis_palette() -> List[int]:
    """256-entry palette used by DAVIS annotations (id 1 = (128, 0, 0))."""
    palette = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= (c & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette.extend([r, g, b])
    return palette


def read_frame(path: str) -> np.ndarray:
    """RGB frame as H×W×3 uint8 (PNG, PPM, JPEG)."""
    with Image.open(path) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def write_frame(path: str, frame: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(path)


def read_label_map(path: str) -> np.ndarray:
    """Indexed PNG → H×W uint8 object ids, 0 = background."""
    with Image.open(path) as img:
        if img.mode not in ("P", "L"):
            raise ValueError(f"{path}: expected an indexed or grayscale PNG, got mode {img.mode}")
        return np.array(img, dtype=np.uint8)


def write_label_map(path: str, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise ValueError(f"label ids must be in 0..255, got {mask.min()}..{mask.max()}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    img = Image.fromarray(mask.astype(np.uint8))
    img.putpalette(davis_palette())
    img.save(path)


def list_label_maps(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise SequenceError(f"{directory}: not a directory")
    return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                  if f.lower().endswith(".png"))


# ═══════════════════════════════════════════════════════════════
# DAVIS SEQUENCES
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SequenceHandle:
    name: str
    frame_paths: Tuple[str, ...]
    annotation_paths: Tuple[str, ...]
    resolution: Tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return len(self.frame_paths)

    def annotation_for(self, index: int) -> Optional[str]:
        stem = os.path.splitext(os.path.basename(self.frame_paths[index]))[0]
        for path in self.annotation_paths:
            if os.path.splitext(os.path.basename(path))[0] == stem:
                return path
        return None

    def frames(self) -> List[np.ndarray]:
        return [read_frame(p) for p in self.frame_paths]


def load_sequence(root: str, image_set: str, name: str) -> SequenceHandle:
    """JPEGImages/<set>/<name>/* and Annotations/<set>/<name>/*.png under root."""
    frame_dir = os.path.join(root, "JPEGImages", image_set, name)
    anno_dir = os.path.join(root, "Annotations", image_set, name)
    if not os.path.isdir(frame_dir):
        raise SequenceError(f"{frame_dir}: frame directory does not exist")

    frames = sorted(os.path.join(frame_dir, f) for f in os.listdir(frame_dir)
                    if f.lower().endswith(FRAME_EXTENSIONS))
    if not frames:
        raise SequenceError(f"{frame_dir}: no frames found")

    sizes = set()
    for path in frames:
        with Image.open(path) as img:
            sizes.add(img.size)
    if len(sizes) != 1:
        raise SequenceError(f"{frame_dir}: mixed resolutions {sorted(sizes)}")
    resolution = sizes.pop()

    annotations = list_label_maps(anno_dir) if os.path.isdir(anno_dir) else []
    handle = SequenceHandle(name, tuple(frames), tuple(annotations), resolution)
    first = handle.annotation_for(0)
    if first is None:
        raise SequenceError(f"{anno_dir}: missing annotation for first frame "
                            f"{os.path.basename(frames[0])}")
    with Image.open(first) as img:
        if img.size != resolution:
            raise SequenceError(f"{first}: annotation size {img.size} != frame size {resolution}")

    if len(annotations) != len(frames):
        logger.info(f"Sequence {name} | {len(frames)} frames | {len(annotations)} annotations")
    return handle


if __name__ == "__main__":
    w = seeded_init(0)
    print(f"\nSeeded weights: {len(w)} tensors, {len(w.blob()) / 1e6:.1f} MB")
    print(f"Palette id 1: {davis_palette()[3:6]}")
