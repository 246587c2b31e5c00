"""
CLIP prior generator.

Frames are scored against a fixed set of object prompts, the per-label
similarities are clipped at ``tau`` and every run of consecutive frames that
is neither too short nor too long for its label marks those frames in the
binary prior.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.cache import caches
from django.core.exceptions import ValidationError
from scipy.special import softmax

from core.domain import ClipPrior, FrameFeatures, validate
from core.exceptions import AnnotationFormatError, EncoderError
from encoders.bridge import encode_texts

logger = logging.getLogger(__name__)

OBJECT_PLACEHOLDER = '[object]'
PRIOR_CACHE = 'priors'


def load_labels(path=None):
    path = Path(path or settings.VIDSUM_LABELS_FILE)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except FileNotFoundError:
        raise AnnotationFormatError(f'labels file not found: {path}')
    labels = tuple(line.strip() for line in lines if line.strip())
    if not labels:
        raise AnnotationFormatError(f'labels file is empty: {path}')
    return labels


def label_set_hash(labels):
    return hashlib.sha256(('\n'.join(labels) + '\n').encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class PriorConfig:
    labels: tuple = field(default_factory=load_labels)
    prompt_template: str = 'An image of [object].'
    tau: float = 0.4
    min_run_frames: int = 10
    max_run_fraction: float = 0.5

    def clean(self):
        if not 0 < self.tau < 1:
            raise ValidationError({'tau': ValidationError('tau must be in (0, 1)', code='range')})
        if self.min_run_frames < 1:
            raise ValidationError({'min_run_frames': ValidationError('must be >= 1', code='min_value')})
        if not 0 < self.max_run_fraction <= 1:
            raise ValidationError({'max_run_fraction': ValidationError('must be in (0, 1]', code='range')})

    @property
    def label_hash(self):
        return label_set_hash(self.labels)

    def prompts(self):
        return [self.prompt_template.replace(OBJECT_PLACEHOLDER, label) for label in self.labels]


def _normalize_rows(matrix, name):
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms == 0).any():
        raise EncoderError(f'{name} contain a zero-norm row')
    return matrix / norms


def build_similarity(frame_feats, text_feats, logit_scale):
    """T×K softmax over labels of the scaled cosine similarity."""
    frames = _normalize_rows(frame_feats, 'frame features')
    texts = _normalize_rows(text_feats, 'text features')
    return softmax(logit_scale * frames @ texts.T, axis=1)


def label_runs(mask):
    """Maximal runs of True as (start, end) with end exclusive."""
    padded = np.concatenate([[0], np.asarray(mask, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def extract_prior(similarity, config: PriorConfig, video_id='video') -> ClipPrior:
    similarity = np.asarray(similarity)
    num_frames = similarity.shape[0]
    prior = np.zeros(num_frames, dtype=np.float32)
    longest = config.max_run_fraction * num_frames
    for column in (similarity > config.tau).T:
        for start, end in label_runs(column):
            length = end - start
            if config.min_run_frames < length < longest:
                prior[start:end] = 1.0
    return validate(ClipPrior(video_id, prior))


class PriorGenerator:
    """Encodes the label prompts once and produces cached priors per video."""

    def __init__(self, handle, config: PriorConfig):
        validate(config)
        self.handle = handle
        self.config = config
        self.cache = caches[PRIOR_CACHE]
        self.text_features = encode_texts(handle, config.prompts())
        logger.info(
            'Prior generator ready: %d labels (hash %s), tau=%s',
            len(config.labels), config.label_hash[:12], config.tau,
        )

    def cache_key(self, features: FrameFeatures):
        digest = hashlib.sha256(features.features.tobytes()).hexdigest()
        return ':'.join([
            'prior', self.config.label_hash, self.config.prompt_template, self.handle.name,
            str(self.handle.seed), repr(self.handle.logit_scale), repr(self.config.tau),
            str(self.config.min_run_frames), repr(self.config.max_run_fraction),
            str(features.features.shape), digest,
        ])

    def similarity(self, features: FrameFeatures):
        if features.dim != self.handle.embed_dim:
            raise EncoderError(
                f'{features.video_id}: features have D={features.dim}, encoder embeds to {self.handle.embed_dim}'
            )
        return build_similarity(features.features, self.text_features, self.handle.logit_scale)

    def generate(self, features: FrameFeatures) -> ClipPrior:
        key = hashlib.sha256(self.cache_key(features).encode('utf-8')).hexdigest()
        cached = self.cache.get(key)
        if cached is not None:
            logger.debug('Prior cache hit for %s', features.video_id)
            return ClipPrior(features.video_id, cached)
        prior = extract_prior(self.similarity(features), self.config, features.video_id)
        self.cache.set(key, np.array(prior.prior))
        return prior
