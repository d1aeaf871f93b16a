#!/usr/bin/env python3
"""
LSMVOS - Propagation Pipeline
Sequential per-frame orchestration: a shared stage (pad, encode, branch,
correlation volumes) once per frame, then a per-object stage (gating, top-N
selection, decode) for every tracked object, then a deterministic merge.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from dataio import WeightsContainer
from decoder import DecoderInput, decode
from encoder import (STRIDE, CropRecord, EncoderFeatures, MatchFeatures, branch, encode,
                     pad_to_multiple, prepare_frame)
from matching import (GateMask, MatchConfig, Polarity, downsample_mask, long_term_match,
                      long_term_volume, short_term_match, short_term_volume)
from network import Network

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("pipeline")


# ═══════════════════════════════════════════════════════════════
# CONFIGURATION
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class AblationConfig:
    use_long: bool = True
    use_short: bool = True
    use_prev_mask: bool = True

    def __post_init__(self):
        if not (self.use_long or self.use_short or self.use_prev_mask):
            raise ValueError("AblationConfig: at least one of long-term matching, short-term "
                             "matching or the previous mask must stay enabled")

    @classmethod
    def preset(cls, name: str) -> "AblationConfig":
        if name not in ABLATION_PRESETS:
            raise ValueError(f"Unknown ablation preset {name!r}; choose from {sorted(ABLATION_PRESETS)}")
        return ABLATION_PRESETS[name]

    @classmethod
    def from_flags(cls, disable_long: bool = False, disable_short: bool = False,
                   disable_prev_mask: bool = False) -> "AblationConfig":
        return cls(not disable_long, not disable_short, not disable_prev_mask)

    @classmethod
    def all_valid(cls) -> List["AblationConfig"]:
        combos = []
        for bits in range(7, 0, -1):
            combos.append(cls(bool(bits & 4), bool(bits & 2), bool(bits & 1)))
        return combos

    @property
    def name(self) -> str:
        for name, cfg in ABLATION_PRESETS.items():
            if cfg == self:
                return name
        return "custom"


ABLATION_PRESETS = {
    "full": AblationConfig(True, True, True),
    "no_mask": AblationConfig(True, True, False),
    "no_short": AblationConfig(True, False, True),
    "no_short_no_mask": AblationConfig(True, False, False),
    "no_long_no_mask": AblationConfig(False, True, False),
}


@dataclass(frozen=True)
class PipelineConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    theta: float = 0.5
    threads: Optional[int] = None   # kernel workers; None = settings
    object_workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.object_workers < 1:
            raise ValueError(f"object_workers must be >= 1, got {self.object_workers}")

    @classmethod
    def from_settings(cls, settings=None, **overrides) -> "PipelineConfig":
        if settings is None:
            from settings import get_settings
            settings = get_settings()
        base = dict(
            match=MatchConfig(settings.k, settings.n, settings.similarity),
            ablation=AblationConfig.preset(settings.ablation),
            theta=settings.theta,
            threads=settings.threads,
            object_workers=settings.object_workers,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


# ═══════════════════════════════════════════════════════════════
# STATE AND COUNTERS
# ═══════════════════════════════════════════════════════════════

def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float32, copy=True)
    x.setflags(write=False)
    return x


@dataclass
class ObjectState:
    obj_id: int
    ref_gate: GateMask          # first frame, stride 8, never mutated
    prev_soft_mask: np.ndarray  # 1×H₀×W₀ probabilities of the previous frame


@dataclass
class PropagationState:
    crop: CropRecord
    ref_global_feat: np.ndarray   # shared by all objects, never mutated
    prev_local_feat: np.ndarray
    objects: Dict[int, ObjectState]
    frame_index: int = 0

    @property
    def object_ids(self) -> List[int]:
        return sorted(self.objects)

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.crop.width, self.crop.height


@dataclass
class StageCounters:
    frame_index: int
    shared_calls: int = 0
    per_object_calls: int = 0
    shared_ms: float = 0.0
    per_object_ms: float = 0.0
    merge_ms: float = 0.0
    object_ms: Dict[int, float] = field(default_factory=dict)

    @property
    def total_ms(self) -> float:
        return self.shared_ms + self.per_object_ms + self.merge_ms


@dataclass
class RunCounters:
    frames: int = 0
    shared_calls: int = 0
    per_object_calls: int = 0
    shared_ms: List[float] = field(default_factory=list)
    per_object_ms: List[float] = field(default_factory=list)
    merge_ms: List[float] = field(default_factory=list)
    frame_ms: List[float] = field(default_factory=list)

    def add(self, c: StageCounters, segmented: bool = True):
        self.frames += 1
        self.shared_calls += c.shared_calls
        self.per_object_calls += c.per_object_calls
        self.shared_ms.append(c.shared_ms)
        if segmented:
            self.per_object_ms.append(c.per_object_ms)
            self.merge_ms.append(c.merge_ms)
            self.frame_ms.append(c.total_ms)

    @property
    def fps(self) -> float:
        total = sum(self.frame_ms)
        return len(self.frame_ms) * 1000.0 / total if total > 0 else 0.0

    def summary(self) -> Dict:
        def stage(values: List[float]) -> Dict:
            return {"mean_ms": float(np.mean(values)) if values else 0.0, "calls": len(values)}
        return {
            "frames": self.frames,
            "shared_calls": self.shared_calls,
            "per_object_calls": self.per_object_calls,
            "stages": {
                "shared": stage(self.shared_ms),
                "per_object": stage(self.per_object_ms),
                "merge": stage(self.merge_ms),
                "frame": stage(self.frame_ms),
            },
            "fps": self.fps,
        }


@dataclass
class FrameResult:
    labels: np.ndarray                 # H₀×W₀ uint8
    probabilities: Dict[int, np.ndarray]
    counters: StageCounters


@dataclass
class SequenceResult:
    labels: List[np.ndarray]
    counters: RunCounters
    object_ids: List[int]


# ═══════════════════════════════════════════════════════════════
# MERGE
# ═══════════════════════════════════════════════════════════════

def merge_objects(prob_maps: Sequence[np.ndarray], theta: float = 0.5,
                  object_ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Per pixel: id of the most probable object if its probability >= theta,
    else 0. Ties go to the earliest map (lowest id when ids ascend).
    """
    if len(prob_maps) == 0:
        raise ValueError("merge_objects: at least one probability map is required")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"merge_objects: theta must be in (0, 1), got {theta}")
    ids = list(object_ids) if object_ids is not None else list(range(1, len(prob_maps) + 1))
    if len(ids) != len(prob_maps):
        raise ValueError(f"merge_objects: {len(prob_maps)} maps but {len(ids)} object ids")
    if any(not 1 <= i <= 255 for i in ids):
        raise ValueError(f"merge_objects: object ids must be in 1..255, got {ids}")
    maps = [np.asarray(p, dtype=np.float32).reshape(np.shape(p)[-2:]) for p in prob_maps]
    if len({m.shape for m in maps}) != 1:
        raise ValueError(f"merge_objects: maps disagree on extents {[m.shape for m in maps]}")
    stack = np.stack(maps)
    best = np.argmax(stack, axis=0)  # first maximum wins
    best_p = np.take_along_axis(stack, best[None], axis=0)[0]
    labels = np.asarray(ids, dtype=np.uint8)[best]
    labels[best_p < theta] = 0
    return labels


# ═══════════════════════════════════════════════════════════════
# PIPELINE
# ═══════════════════════════════════════════════════════════════

def _mask_gate(mask: np.ndarray) -> GateMask:
    """1×H₀×W₀ (or H₀×W₀) mask at frame resolution → stride-8 gate."""
    padded, _ = pad_to_multiple(np.asarray(mask, dtype=np.float32).reshape(np.shape(mask)[-2:]), STRIDE)
    return downsample_mask(padded[None], STRIDE)


class SegmentationPipeline:
    def __init__(self, network: Network, config: Optional[PipelineConfig] = None):
        self.network = network
        self.config = config or PipelineConfig.from_settings()
        if self.network.n != self.config.match.n:
            raise ValueError(f"network was built for n={self.network.n} similarity channels, "
                             f"config asks for n={self.config.match.n}")

    @classmethod
    def from_weights(cls, weights: WeightsContainer,
                     config: Optional[PipelineConfig] = None) -> "SegmentationPipeline":
        return cls(Network.from_weights(weights), config)

    def _features(self, frame: np.ndarray) -> Tuple[EncoderFeatures, MatchFeatures, CropRecord]:
        x, crop = prepare_frame(frame)
        feats = encode(x, self.network.encoder)
        return feats, branch(feats, self.network.branch), crop

    def init_session(self, frame0: np.ndarray, label_map0: np.ndarray) -> PropagationState:
        frame0 = np.asarray(frame0)
        label_map0 = np.asarray(label_map0)
        if label_map0.ndim != 2:
            raise ValueError(f"label map must be H×W, got shape {label_map0.shape}")
        if frame0.shape[:2] != label_map0.shape:
            raise ValueError(f"frame extents {frame0.shape[:2]} do not match label map {label_map0.shape}")
        ids = [int(i) for i in np.unique(label_map0) if i != 0]
        if ids and (min(ids) < 1 or max(ids) > 255):
            raise ValueError(f"object ids must be in 1..255, got {min(ids)}..{max(ids)}")
        if not ids:
            raise ValueError("label map has no objects (all pixels are background)")

        _, match, crop = self._features(frame0)
        objects = {}
        for obj_id in ids:
            mask = (label_map0 == obj_id).astype(np.float32)[None]
            gate = _mask_gate(mask)
            gate.values.setflags(write=False)
            objects[obj_id] = ObjectState(obj_id, gate, mask)

        logger.info(f"Session initialized | {crop.width}x{crop.height} | objects={ids}")
        return PropagationState(crop=crop,
                                ref_global_feat=_frozen(match.global_feat),
                                prev_local_feat=match.local_feat,
                                objects=objects)

    def _segment_object(self, obj: ObjectState, feats: EncoderFeatures, match: MatchFeatures,
                        state: PropagationState, long_vol, short_vol) -> Tuple[np.ndarray, float]:
        start = time.perf_counter()
        cfg, ab, threads = self.config.match, self.config.ablation, self.config.threads
        h8, w8 = match.local_feat.shape[1:]
        zeros = np.zeros((cfg.n, h8, w8), dtype=np.float32)
        prev_gate = _mask_gate(obj.prev_soft_mask)

        if ab.use_long:
            g_fg = long_term_match(match.global_feat, state.ref_global_feat, obj.ref_gate, cfg,
                                   Polarity.FOREGROUND, long_vol, threads)
            g_bg = long_term_match(match.global_feat, state.ref_global_feat, obj.ref_gate, cfg,
                                   Polarity.BACKGROUND, long_vol, threads)
        else:
            g_fg = g_bg = zeros
        if ab.use_short:
            l_fg = short_term_match(match.local_feat, state.prev_local_feat, prev_gate, cfg,
                                    Polarity.FOREGROUND, short_vol, threads)
            l_bg = short_term_match(match.local_feat, state.prev_local_feat, prev_gate, cfg,
                                    Polarity.BACKGROUND, short_vol, threads)
        else:
            l_fg = l_bg = zeros
        prev_mask = prev_gate.values if ab.use_prev_mask else np.zeros((1, h8, w8), np.float32)

        inp = DecoderInput(g_fg, g_bg, l_fg, l_bg, prev_mask, feats.s8)
        prob = decode(inp, feats, state.crop, self.network.decoder)
        return prob, (time.perf_counter() - start) * 1000.0

    def segment_frame(self, state: PropagationState, frame: np.ndarray) -> FrameResult:
        frame = np.asarray(frame)
        if (frame.shape[1], frame.shape[0]) != state.resolution:
            raise ValueError(f"frame extents {frame.shape[1]}x{frame.shape[0]} drifted from "
                             f"session resolution {state.resolution[0]}x{state.resolution[1]}")
        counters = StageCounters(frame_index=state.frame_index + 1)
        ab, threads = self.config.ablation, self.config.threads

        # shared stage
        start = time.perf_counter()
        feats, match, _ = self._features(frame)
        long_vol = long_term_volume(match.global_feat, state.ref_global_feat, threads) if ab.use_long else None
        short_vol = (short_term_volume(match.local_feat, state.prev_local_feat, self.config.match.k, threads)
                     if ab.use_short else None)
        counters.shared_ms = (time.perf_counter() - start) * 1000.0
        counters.shared_calls = 1

        # per-object stage
        start = time.perf_counter()
        ids = state.object_ids
        run = lambda obj_id: self._segment_object(state.objects[obj_id], feats, match, state,
                                                  long_vol, short_vol)
        if self.config.object_workers > 1 and len(ids) > 1:
            with ThreadPoolExecutor(max_workers=self.config.object_workers) as pool:
                outputs = list(pool.map(run, ids))
        else:
            outputs = [run(obj_id) for obj_id in ids]
        counters.per_object_ms = (time.perf_counter() - start) * 1000.0
        counters.per_object_calls = len(ids)
        probs = {obj_id: out[0] for obj_id, out in zip(ids, outputs)}
        counters.object_ms = {obj_id: out[1] for obj_id, out in zip(ids, outputs)}

        start = time.perf_counter()
        labels = merge_objects([probs[i] for i in ids], self.config.theta, ids)
        counters.merge_ms = (time.perf_counter() - start) * 1000.0

        state.prev_local_feat = match.local_feat
        for obj_id in ids:
            state.objects[obj_id].prev_soft_mask = probs[obj_id]
        state.frame_index += 1

        logger.debug(f"Frame {state.frame_index} | objects={len(ids)} | shared={counters.shared_ms:.1f}ms "
                     f"| per_object={counters.per_object_ms:.1f}ms | merge={counters.merge_ms:.1f}ms")
        return FrameResult(labels, probs, counters)

    def run_sequence(self, frames: Sequence[np.ndarray], label_map0: np.ndarray) -> SequenceResult:
        if len(frames) == 0:
            raise ValueError("run_sequence: no frames")
        run = RunCounters()
        start = time.perf_counter()
        state = self.init_session(frames[0], label_map0)
        run.add(StageCounters(0, shared_calls=1, shared_ms=(time.perf_counter() - start) * 1000.0),
                segmented=False)

        labels = [np.asarray(label_map0, dtype=np.uint8)]
        for t in range(1, len(frames)):
            result = self.segment_frame(state, frames[t])
            labels.append(result.labels)
            run.add(result.counters)
            logger.info(f"Frame {t}/{len(frames) - 1} | objects={len(state.objects)} "
                        f"| {result.counters.total_ms:.1f}ms")
        return SequenceResult(labels, run, state.object_ids)


def init_session(frame0: np.ndarray, label_map0: np.ndarray, weights: WeightsContainer,
                 cfg: Optional[PipelineConfig] = None) -> Tuple[SegmentationPipeline, PropagationState]:
    pipe = SegmentationPipeline.from_weights(weights, cfg)
    return pipe, pipe.init_session(frame0, label_map0)


def run_sequence(frames: Sequence[np.ndarray], label_map0: np.ndarray, weights: WeightsContainer,
                 cfg: Optional[PipelineConfig] = None) -> SequenceResult:
    return SegmentationPipeline.from_weights(weights, cfg).run_sequence(frames, label_map0)
