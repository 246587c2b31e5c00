"""
On-disk stores for frame features, CLIP priors and summary scores.

A store is a directory of per-video container files plus ``index.json``.
Reads may run concurrently; a store has a single writer.
"""
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from core.domain import ClipPrior, FrameFeatures, SummaryScores, validate
from core.exceptions import ChecksumError, UnknownVideoError
from core.utils import get_video_file_path

from .container import HEADER_BYTES, decode_matrix, encode_matrix

logger = logging.getLogger(__name__)

INDEX_FILENAME = 'index.json'
CONTAINER_SUFFIX = '.vsf'

KIND_FEATURES = 'features'
KIND_PRIOR = 'prior'
KIND_SCORES = 'scores'


class FeatureStore:
    """Directory-backed map of video id to a container file."""

    def __init__(self, root_dir):
        self.root_dir = Path(root_dir)
        self.index = {}
        index_path = self.root_dir / INDEX_FILENAME
        if index_path.exists():
            self.index = json.loads(index_path.read_text(encoding='utf-8'))

    def __contains__(self, video_id):
        return video_id in self.index

    def __len__(self):
        return len(self.index)

    def video_ids(self, kind=None):
        return sorted(
            video_id for video_id, entry in self.index.items()
            if kind is None or entry['kind'] == kind
        )

    def put_matrix(self, video_id, matrix, kind, **meta):
        self.root_dir.mkdir(parents=True, exist_ok=True)
        path = get_video_file_path(self.root_dir, video_id, CONTAINER_SUFFIX)
        for other_id, entry in self.index.items():
            if other_id != video_id and entry['file'] == path.name:
                digest = hashlib.sha1(video_id.encode('utf-8')).hexdigest()
                path = self.root_dir / f'{digest}{CONTAINER_SUFFIX}'
                break
        blob = encode_matrix(matrix)
        path.write_bytes(blob)
        rows, cols = np.asarray(matrix).shape
        self.index[video_id] = {
            'kind': kind,
            'file': path.name,
            'rows': int(rows),
            'cols': int(cols),
            'payload_offset': HEADER_BYTES,
            **meta,
        }
        self._write_index()

    def get_matrix(self, video_id, kind=None):
        try:
            entry = self.index[video_id]
        except KeyError:
            raise UnknownVideoError(f'unknown video id {video_id!r} in {self.root_dir}')
        if kind is not None and entry['kind'] != kind:
            raise UnknownVideoError(f'{video_id!r} holds {entry["kind"]}, not {kind}')
        path = self.root_dir / entry['file']
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            raise UnknownVideoError(f'container for {video_id!r} missing at {path}')
        matrix = decode_matrix(blob)
        if matrix.shape != (entry['rows'], entry['cols']):
            raise ChecksumError(f'container for {video_id!r} does not match its index entry')
        return matrix, entry

    def _write_index(self):
        payload = json.dumps(self.index, indent=2, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=self.root_dir, prefix='.index-')
        with os.fdopen(fd, 'w', encoding='utf-8') as handle:
            handle.write(payload + '\n')
        os.replace(tmp, self.root_dir / INDEX_FILENAME)


def write_features(store: FeatureStore, features: FrameFeatures):
    validate(features)
    store.put_matrix(
        features.video_id,
        features.features,
        KIND_FEATURES,
        fps=features.fps,
        duration_sec=features.duration_sec,
    )


def read_features(store: FeatureStore, video_id) -> FrameFeatures:
    matrix, entry = store.get_matrix(video_id, KIND_FEATURES)
    return FrameFeatures(
        video_id=video_id,
        features=matrix,
        fps=entry['fps'],
        duration_sec=entry['duration_sec'],
    )


def write_prior(store: FeatureStore, prior: ClipPrior, **meta):
    validate(prior)
    store.put_matrix(prior.video_id, prior.prior.reshape(-1, 1), KIND_PRIOR, **meta)


def read_prior(store: FeatureStore, video_id) -> ClipPrior:
    matrix, _ = store.get_matrix(video_id, KIND_PRIOR)
    return ClipPrior(video_id=video_id, prior=matrix[:, 0])


def write_scores(store: FeatureStore, scores: SummaryScores):
    validate(scores)
    store.put_matrix(scores.video_id, scores.scores.reshape(-1, 1), KIND_SCORES)


def read_scores(store: FeatureStore, video_id) -> SummaryScores:
    matrix, _ = store.get_matrix(video_id, KIND_SCORES)
    return SummaryScores(video_id=video_id, scores=matrix[:, 0])
