"""
Assembling TrainingExamples from the on-disk stores the commands receive.
"""
import logging

from clip_prior.prior import PriorGenerator
from core.exceptions import AnnotationFormatError, UnknownVideoError
from dataset_io.store import KIND_FEATURES, KIND_PRIOR, FeatureStore, read_features, read_prior
from encoders.bridge import load_encoder

from .trainer import TrainingExample

logger = logging.getLogger(__name__)


def feature_ids(features_dir):
    store = FeatureStore(features_dir)
    video_ids = store.video_ids(KIND_FEATURES)
    if not video_ids:
        raise AnnotationFormatError(f'no frame features in {features_dir}')
    return store, video_ids


class PriorSource:
    """
    Priors read from a ``gen_prior`` store, or generated (and cached) on the
    fly from the configured encoder when no store is given.
    """

    def __init__(self, config, priors_dir=None):
        self.store = FeatureStore(priors_dir) if priors_dir else None
        self.generator = None
        self.label_hash = ''
        if self.store is not None:
            entries = [self.store.index[video_id] for video_id in self.store.video_ids(KIND_PRIOR)]
            hashes = {entry.get('label_set_hash', '') for entry in entries}
            self.label_hash = hashes.pop() if len(hashes) == 1 else ''
        else:
            self.generator = PriorGenerator(load_encoder(config.encoder), config.prior)
            self.label_hash = config.prior.label_hash

    def get(self, features):
        if self.generator is not None:
            return self.generator.generate(features)
        if features.video_id not in self.store:
            raise UnknownVideoError(f'no prior for {features.video_id!r} in {self.store.root_dir}')
        return read_prior(self.store, features.video_id)


def build_examples(store, video_ids, annotations=None, summaries=None, priors=None):
    """
    One TrainingExample per id present in the store and in every given
    annotation mapping; ids missing an annotation are skipped with a warning.
    """
    examples = []
    skipped = []
    for video_id in video_ids:
        annotation = annotations.get(video_id) if annotations is not None else None
        summary = summaries.get(video_id) if summaries is not None else None
        if (annotations is not None and annotation is None) or (summaries is not None and summary is None):
            skipped.append(video_id)
            continue
        features = read_features(store, video_id)
        prior = priors.get(features) if priors is not None else None
        examples.append(TrainingExample(features, annotation=annotation, prior=prior, summary=summary))
    if skipped:
        logger.warning('Skipped %d videos without annotations: %s', len(skipped), ', '.join(skipped))
    return examples
