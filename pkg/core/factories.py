"""
factory-boy factories for domain objects and the run registry.
"""
import factory
import numpy as np
from factory.django import DjangoModelFactory

from config import __version__

from .domain import (
    CaptionEvent,
    ClipPrior,
    DenseCaptionAnnotation,
    FrameFeatures,
    GroundTruthSummary,
    SummaryScores,
)
from .models import RunManifest


def _unit_rows(seed, rows, cols):
    matrix = np.random.default_rng(seed).standard_normal((rows, cols))
    return (matrix / np.linalg.norm(matrix, axis=1, keepdims=True)).astype(np.float32)


class FrameFeaturesFactory(factory.Factory):
    class Meta:
        model = FrameFeatures

    class Params:
        num_frames = 10
        dim = 16

    video_id = factory.Sequence(lambda n: f'video_{n:03d}')
    features = factory.LazyAttributeSequence(lambda o, n: _unit_rows(n, o.num_frames, o.dim))
    fps = 2.0
    duration_sec = factory.LazyAttribute(lambda o: o.num_frames / o.fps)


class CaptionEventFactory(factory.Factory):
    class Meta:
        model = CaptionEvent

    start_sec = 0.0
    end_sec = 2.0
    sentence = ('a', 'person', 'walks')


class DenseCaptionAnnotationFactory(factory.Factory):
    class Meta:
        model = DenseCaptionAnnotation

    video_id = factory.Sequence(lambda n: f'video_{n:03d}')
    duration_sec = 10.0
    events = factory.LazyFunction(lambda: [
        CaptionEvent(1.0, 4.0, ('a', 'dog', 'runs')),
        CaptionEvent(5.0, 9.0, ('the', 'dog', 'sits')),
    ])


class SummaryScoresFactory(factory.Factory):
    class Meta:
        model = SummaryScores

    class Params:
        num_frames = 10

    video_id = factory.Sequence(lambda n: f'video_{n:03d}')
    scores = factory.LazyAttributeSequence(
        lambda o, n: np.random.default_rng(n).uniform(size=o.num_frames).astype(np.float32)
    )


class ClipPriorFactory(factory.Factory):
    class Meta:
        model = ClipPrior

    class Params:
        num_frames = 10

    video_id = factory.Sequence(lambda n: f'video_{n:03d}')
    prior = factory.LazyAttribute(
        lambda o: (np.arange(o.num_frames) < o.num_frames // 2).astype(np.float32)
    )


class GroundTruthSummaryFactory(factory.Factory):
    class Meta:
        model = GroundTruthSummary

    class Params:
        num_frames = 20
        num_annotators = 3
        shot_len = 5

    video_id = factory.Sequence(lambda n: f'video_{n:03d}')
    annotator_scores = factory.LazyAttributeSequence(
        lambda o, n: np.random.default_rng(n).integers(1, 6, size=(o.num_annotators, o.num_frames))
    )
    shot_boundaries = factory.LazyAttribute(
        lambda o: list(range(0, o.num_frames, o.shot_len)) + [o.num_frames]
    )
    consensus_scores = factory.LazyAttribute(
        lambda o: np.asarray(o.annotator_scores, dtype=np.float64).mean(axis=0)
    )
    synthetic_shots = False


class RunManifestFactory(DjangoModelFactory):
    class Meta:
        model = RunManifest

    command = 'evaluate'
    output_dir = factory.Sequence(lambda n: f'/tmp/vidsum/run_{n}')
    seed = 0
    config_snapshot = factory.LazyFunction(dict)
    label_set_hash = ''
    checkpoint_hashes = factory.LazyFunction(dict)
    tool_version = __version__
