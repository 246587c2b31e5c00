"""
Domain types shared by every vidsum app.

All types are frozen after construction: array payloads are copied into
read-only buffers, so instances can be shared between threads. ``clean()``
checks the invariants of one type and ``validate()`` is the module-level
entry point used by ingestion and the pipeline stages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from django.core.exceptions import ValidationError

# Reserved vocabulary indices; the captioner vocabulary always starts with
# these four tokens in this order.
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = '<pad>', '<bos>', '<eos>', '<unk>'
SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN)
BOS_INDEX, EOS_INDEX, PAD_INDEX, UNK_INDEX = 0, 1, 2, 3

CONSENSUS_TOLERANCE = 1e-6


def _readonly(values, dtype, ndim=None):
    array = np.array(values, dtype=dtype, copy=True, order='C')
    if ndim is not None and array.ndim != ndim:
        raise ValidationError(
            f'expected a {ndim}-d array, got shape {array.shape}',
            code='shape',
        )
    array.setflags(write=False)
    return array


def _error(field_name, message, code):
    return ValidationError({field_name: ValidationError(message, code=code)})


@dataclass(frozen=True, eq=False)
class FrameFeatures:
    """Per-video T×D matrix produced by the frozen visual encoder."""

    video_id: str
    features: np.ndarray
    fps: float
    duration_sec: float

    def __post_init__(self):
        object.__setattr__(self, 'features', _readonly(self.features, np.float32, ndim=2))
        object.__setattr__(self, 'fps', float(self.fps))
        object.__setattr__(self, 'duration_sec', float(self.duration_sec))

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def clean(self):
        if not self.video_id:
            raise _error('video_id', 'video id is empty', 'required')
        if self.num_frames < 1 or self.dim < 1:
            raise _error('features', f'empty feature matrix {self.features.shape}', 'empty')
        if not np.isfinite(self.features).all():
            raise _error('features', 'features contain NaN or Inf', 'non_finite')
        if not self.fps > 0:
            raise _error('fps', 'fps must be positive', 'positive')
        if not self.duration_sec > 0:
            raise _error('duration_sec', 'duration must be positive', 'positive')
        expected = self.duration_sec * self.fps
        if abs(self.num_frames - expected) > 1.0:
            raise _error(
                'features',
                f'T={self.num_frames} inconsistent with duration*fps={expected:.3f}',
                'frame_count',
            )

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.features, dtype=dtype)


@dataclass(frozen=True)
class CaptionEvent:
    start_sec: float
    end_sec: float
    sentence: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'start_sec', float(self.start_sec))
        object.__setattr__(self, 'end_sec', float(self.end_sec))
        object.__setattr__(self, 'sentence', tuple(self.sentence))

    @property
    def length_sec(self) -> float:
        return self.end_sec - self.start_sec


@dataclass(frozen=True)
class DenseCaptionAnnotation:
    """Dense caption events for one video, the weak supervision signal."""

    video_id: str
    events: tuple[CaptionEvent, ...]
    duration_sec: float

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))
        object.__setattr__(self, 'duration_sec', float(self.duration_sec))

    def clean(self):
        if not self.video_id:
            raise _error('video_id', 'video id is empty', 'required')
        if not self.duration_sec > 0:
            raise _error('duration_sec', 'duration must be positive', 'positive')
        if not self.events:
            raise _error('events', f'no caption events for {self.video_id}', 'empty')
        for index, event in enumerate(self.events):
            if not 0 <= event.start_sec < event.end_sec <= self.duration_sec:
                raise _error(
                    'events',
                    f'event {index} [{event.start_sec}, {event.end_sec}] outside '
                    f'0 <= start < end <= {self.duration_sec}',
                    'segment_bounds',
                )
            if not event.sentence:
                raise _error('events', f'event {index} has an empty sentence', 'empty_sentence')

    def normalized_segments(self) -> np.ndarray:
        """Events as (start, end) pairs scaled to [0, 1] by the duration."""
        bounds = np.array([[e.start_sec, e.end_sec] for e in self.events], dtype=np.float64)
        return bounds.reshape(-1, 2) / self.duration_sec


@dataclass(frozen=True, eq=False)
class SummaryScores:
    """Frame-wise importance scores in [0, 1]."""

    video_id: str
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'scores', _readonly(self.scores, np.float32, ndim=1))

    def __len__(self):
        return self.scores.shape[0]

    def clean(self):
        if not self.video_id:
            raise _error('video_id', 'video id is empty', 'required')
        if len(self) < 1:
            raise _error('scores', 'scores are empty', 'empty')
        if not np.isfinite(self.scores).all() or (self.scores < 0).any() or (self.scores > 1).any():
            raise _error('scores', 'scores out of [0,1]', 'range')


@dataclass(frozen=True, eq=False)
class ClipPrior:
    """Binary per-frame prior. Zero means unconstrained, not excluded."""

    video_id: str
    prior: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'prior', _readonly(self.prior, np.float32, ndim=1))

    def __len__(self):
        return self.prior.shape[0]

    def clean(self):
        if not self.video_id:
            raise _error('video_id', 'video id is empty', 'required')
        if not np.isin(self.prior, (0.0, 1.0)).all():
            raise _error('prior', 'prior not binary', 'binary')


@dataclass(frozen=True, eq=False)
class GroundTruthSummary:
    """Per-annotator frame importance plus the shots used for evaluation."""

    video_id: str
    annotator_scores: np.ndarray
    shot_boundaries: tuple[int, ...]
    consensus_scores: np.ndarray
    synthetic_shots: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'annotator_scores', _readonly(self.annotator_scores, np.float64, ndim=2))
        object.__setattr__(self, 'consensus_scores', _readonly(self.consensus_scores, np.float64, ndim=1))
        object.__setattr__(self, 'shot_boundaries', tuple(int(b) for b in self.shot_boundaries))

    @classmethod
    def from_annotators(cls, video_id, annotator_scores, shot_boundaries, synthetic_shots=False):
        scores = np.asarray(annotator_scores, dtype=np.float64)
        return cls(
            video_id=video_id,
            annotator_scores=scores,
            shot_boundaries=shot_boundaries,
            consensus_scores=scores.mean(axis=0) if scores.ndim == 2 else scores,
            synthetic_shots=synthetic_shots,
        )

    @property
    def num_annotators(self) -> int:
        return self.annotator_scores.shape[0]

    @property
    def num_frames(self) -> int:
        return self.annotator_scores.shape[1]

    def clean(self):
        if not self.video_id:
            raise _error('video_id', 'video id is empty', 'required')
        if self.num_annotators < 1 or self.num_frames < 1:
            raise _error('annotator_scores', 'need at least one annotator and one frame', 'empty')
        boundaries = self.shot_boundaries
        if len(boundaries) < 2 or boundaries[0] != 0 or boundaries[-1] != self.num_frames:
            raise _error(
                'shot_boundaries',
                f'boundaries must start at 0 and end at T={self.num_frames}',
                'tiling',
            )
        if any(b >= nxt for b, nxt in zip(boundaries, boundaries[1:])):
            raise _error('shot_boundaries', 'boundaries must be strictly increasing', 'ordering')
        if self.consensus_scores.shape != (self.num_frames,):
            raise _error('consensus_scores', 'consensus length differs from T', 'shape')
        if not np.isfinite(self.annotator_scores).all():
            raise _error('annotator_scores', 'annotator scores contain NaN or Inf', 'non_finite')
        mean = self.annotator_scores.mean(axis=0)
        if np.abs(mean - self.consensus_scores).max() > CONSENSUS_TOLERANCE:
            raise _error('consensus_scores', 'consensus is not the annotator mean', 'consensus')


@dataclass(frozen=True, eq=False)
class CaptionerOutput:
    """Set prediction of the captioner for one video.

    ``segments`` holds normalized (center, width) pairs, one row per event
    query; ``caption_logits`` is N×L×V.
    """

    segments: torch.Tensor
    confidence_logits: torch.Tensor
    caption_logits: torch.Tensor
    event_count_logits: torch.Tensor
    hidden: torch.Tensor | None = field(default=None, repr=False)
    memory: torch.Tensor | None = field(default=None, repr=False)

    def __len__(self):
        return self.segments.shape[0]

    @property
    def proposals(self) -> list[tuple[tuple[float, float], float, torch.Tensor]]:
        return [
            ((float(seg[0]), float(seg[1])), float(conf), logits)
            for seg, conf, logits in zip(self.segments, self.confidence_logits, self.caption_logits)
        ]

    def start_end(self) -> torch.Tensor:
        """Segments converted to normalized (start, end)."""
        center, width = self.segments.unbind(-1)
        return torch.stack([center - width / 2, center + width / 2], dim=-1)

    def clean(self):
        n = len(self)
        if self.segments.shape != (n, 2):
            raise _error('segments', f'expected ({n}, 2) segments', 'shape')
        if self.confidence_logits.shape != (n,):
            raise _error('confidence_logits', f'expected {n} confidences', 'shape')
        if self.caption_logits.ndim != 3 or self.caption_logits.shape[0] != n:
            raise _error('caption_logits', f'expected {n}×L×V caption logits', 'shape')
        if self.event_count_logits.ndim != 1:
            raise _error('event_count_logits', 'event count logits must be a vector', 'shape')
        segments = self.segments.detach()
        if (segments[:, 1] <= 0).any():
            raise _error('segments', 'widths must be positive', 'width')
        if (segments < 0).any() or (segments > 1).any():
            raise _error('segments', 'segments must be normalized to [0,1]', 'range')


def validate(instance):
    """Check the invariants of a domain object and return it unchanged."""
    instance.clean()
    return instance


def validate_all(instances: Sequence):
    return [validate(instance) for instance in instances]
