"""
Deterministic synthetic corpus for demos and the training acceptance tests.

Every video has one or two designated segments whose frame rows sit next to
the text embedding of an object prompt, so the CLIP prior fires on them.
The first segment is covered by a caption event; on every other video a
second segment is left uncaptioned and is reachable only through the prior.
Annotator scores mark all designated segments.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.domain import CaptionEvent, DenseCaptionAnnotation, FrameFeatures, GroundTruthSummary, validate
from core.text import detokenize, tokenize
from core.utils import write_json
from encoders.bridge import EncoderHandle, encode_texts

from .ingest import summary_to_record, uniform_boundaries
from .store import FeatureStore, write_features

logger = logging.getLogger(__name__)

CAPTION_TEMPLATE = 'a {label} appears in the scene'
SEGMENT_MARGIN = 3
LOW_SCORE, HIGH_SCORE = 1.0, 5.0


@dataclass(frozen=True)
class SyntheticVideo:
    features: FrameFeatures
    annotation: DenseCaptionAnnotation
    summary: GroundTruthSummary
    captioned: tuple
    prior_only: tuple

    @property
    def video_id(self) -> str:
        return self.features.video_id

    @property
    def designated(self) -> tuple:
        return self.captioned + self.prior_only

    def mask(self, segments=None):
        segments = self.designated if segments is None else segments
        mask = np.zeros(self.features.num_frames, dtype=bool)
        for start, end in segments:
            mask[start:end] = True
        return mask


@dataclass(frozen=True)
class SyntheticCorpus:
    videos: tuple
    fps: float

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)


def _unit(rows):
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def make_synthetic_corpus(
    handle: EncoderHandle,
    labels,
    prompt_template='An image of [object].',
    num_videos=8,
    num_frames=40,
    segment_frames=14,
    fps=2.0,
    num_annotators=3,
    noise=0.05,
    seed=0,
) -> SyntheticCorpus:
    """
    Build ``num_videos`` videos of ``num_frames`` frames in the encoder's space.

    Captioned segments alternate between the start and the end of the video;
    odd-numbered videos also get an uncaptioned segment at the other end.
    """
    if num_frames < 2 * (segment_frames + SEGMENT_MARGIN) + 1:
        raise ValueError(f'{num_frames} frames cannot hold two {segment_frames}-frame segments')
    labels = list(labels)
    rng = np.random.default_rng(seed)
    prompts = [prompt_template.replace('[object]', label) for label in labels]
    label_rows = encode_texts(handle, prompts)
    duration = num_frames / fps
    slots = (
        (SEGMENT_MARGIN, SEGMENT_MARGIN + segment_frames),
        (num_frames - SEGMENT_MARGIN - segment_frames, num_frames - SEGMENT_MARGIN),
    )

    videos = []
    for index in range(num_videos):
        video_id = f'synthetic_{index:03d}'
        first, second = rng.choice(len(labels), size=2, replace=False)
        captioned_slot = slots[index % 2]
        captioned = (captioned_slot,)
        prior_only = (slots[1 - index % 2],) if index % 2 else ()

        rows = _unit(rng.standard_normal((num_frames, handle.embed_dim)))
        for (start, end), label in zip(captioned + prior_only, (first, second)):
            jitter = _unit(rng.standard_normal((end - start, handle.embed_dim)))
            rows[start:end] = _unit(label_rows[label] + noise * jitter)
        features = validate(FrameFeatures(video_id, rows.astype(np.float32), fps, duration))

        start, end = captioned_slot
        sentence = tokenize(CAPTION_TEMPLATE.format(label=labels[first]))
        annotation = validate(DenseCaptionAnnotation(
            video_id, [CaptionEvent(start / fps, end / fps, sentence)], duration,
        ))

        pattern = np.zeros(num_frames)
        for start, end in captioned + prior_only:
            pattern[start:end] = 1.0
        scores = np.tile(LOW_SCORE + (HIGH_SCORE - LOW_SCORE) * pattern, (num_annotators, 1))
        summary = validate(GroundTruthSummary.from_annotators(
            video_id, scores, uniform_boundaries(num_frames, max(1, int(round(2 * fps)))),
        ))
        videos.append(SyntheticVideo(features, annotation, summary, captioned, prior_only))

    logger.info('Generated %d synthetic videos of %d frames', num_videos, num_frames)
    return SyntheticCorpus(tuple(videos), fps)


def write_synthetic_corpus(corpus: SyntheticCorpus, out_dir):
    """
    Lay the corpus out on disk: ``features/`` store, ``captions.json`` in the
    ActivityNet-Caption shape, ``gt/`` records and ``segments.json``.
    """
    out_dir = Path(out_dir)
    store = FeatureStore(out_dir / 'features')
    captions = {}
    segments = {}
    for video in corpus:
        write_features(store, video.features)
        write_json(out_dir / 'gt' / f'{video.video_id}.json', summary_to_record(video.summary))
        captions[video.video_id] = {
            'duration': video.annotation.duration_sec,
            'timestamps': [[event.start_sec, event.end_sec] for event in video.annotation.events],
            'sentences': [detokenize(event.sentence) for event in video.annotation.events],
        }
        segments[video.video_id] = {
            'captioned': [list(segment) for segment in video.captioned],
            'prior_only': [list(segment) for segment in video.prior_only],
        }
    write_json(out_dir / 'captions.json', captions)
    write_json(out_dir / 'segments.json', segments)
    return {
        'features': out_dir / 'features',
        'captions': out_dir / 'captions.json',
        'gt': out_dir / 'gt',
        'segments': out_dir / 'segments.json',
    }
