"""
Annotation ingestion for dense-caption and summary datasets.

Caption files (ActivityNet-Caption and the TVSum/SumMe caption sidecars)
share one JSON shape::

    {"<video_id>": {"duration": 10.0,
                    "timestamps": [[0, 4], [5, 9]],
                    "sentences": ["a man runs.", "he jumps."]}}

Summary datasets are directories holding per-video JSON records, the TVSum
annotation TSV, or SumMe ``.mat`` ground-truth files.
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.conf import settings

from core.domain import CaptionEvent, DenseCaptionAnnotation, GroundTruthSummary, validate
from core.exceptions import AnnotationFormatError
from core.text import tokenize
from core.utils import write_json_lines

logger = logging.getLogger(__name__)

LAYOUT_TVSUM = 'tvsum'
LAYOUT_SUMME = 'summe'
LAYOUTS = (LAYOUT_TVSUM, LAYOUT_SUMME)
SHOTS_FILENAME = 'shots.json'
NON_RECORD_FILES = {SHOTS_FILENAME, 'manifest.json', 'split.json'}

# Annotator counts of the public releases; other counts only warn.
EXPECTED_ANNOTATORS = {
    LAYOUT_TVSUM: (20, 20),
    LAYOUT_SUMME: (15, 18),
}


@dataclass
class CaptionIngest:
    annotations: list
    dropped_events: int = 0
    skipped_videos: list = field(default_factory=list)


@dataclass
class SidecarIngest:
    annotations: list
    orphans: list = field(default_factory=list)


def _load_json(path):
    try:
        with open(path, encoding='utf-8') as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f'{path}: malformed JSON ({exc})') from exc


def parse_caption_payload(data, source='<memory>') -> CaptionIngest:
    if not isinstance(data, dict):
        raise AnnotationFormatError(f'{source}: expected an object keyed by video id')
    result = CaptionIngest(annotations=[])
    for video_id in sorted(data):
        record = data[video_id]
        try:
            duration = float(record['duration'])
            timestamps = record['timestamps']
            sentences = record['sentences']
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationFormatError(f'{source}: video {video_id!r} is missing {exc}') from exc
        if len(timestamps) != len(sentences):
            raise AnnotationFormatError(
                f'{source}: video {video_id!r} has {len(timestamps)} timestamps '
                f'but {len(sentences)} sentences'
            )
        events = []
        for index, (segment, sentence) in enumerate(zip(timestamps, sentences)):
            try:
                start, end = segment
                start = max(0.0, float(start))
                end = min(duration, float(end))
                tokens = tokenize(sentence)
            except (TypeError, ValueError, AttributeError) as exc:
                raise AnnotationFormatError(
                    f'{source}: video {video_id!r} event {index} is malformed ({exc})'
                ) from exc
            if end <= start:
                result.dropped_events += 1
                continue
            events.append(CaptionEvent(start, end, tokens))
        if timestamps and not events:
            result.skipped_videos.append(video_id)
            continue
        annotation = DenseCaptionAnnotation(video_id=video_id, events=events, duration_sec=duration)
        result.annotations.append(validate(annotation))
    if result.dropped_events:
        logger.warning('%s: dropped %d degenerate events', source, result.dropped_events)
    if result.skipped_videos:
        logger.warning('%s: skipped %d videos with no usable events', source, len(result.skipped_videos))
    return result


def ingest_anet_captions(path) -> CaptionIngest:
    """Parse an ActivityNet-Caption style JSON file."""
    return parse_caption_payload(_load_json(path), source=str(path))


def ingest_caption_sidecar(path, known_ids) -> SidecarIngest:
    """
    Parse a TVSum-Caption / SumMe-Caption sidecar and reconcile it against
    the video ids of a feature store. Unknown ids are reported, not fatal.
    """
    parsed = parse_caption_payload(_load_json(path), source=str(path))
    known = set(known_ids)
    matched = [a for a in parsed.annotations if a.video_id in known]
    orphans = sorted(a.video_id for a in parsed.annotations if a.video_id not in known)
    if orphans:
        logger.warning('%s: %d sidecar videos absent from the feature store', path, len(orphans))
    return SidecarIngest(annotations=matched, orphans=orphans)


def write_reconciliation_report(path, orphans, source):
    write_json_lines(path, [
        {'video_id': video_id, 'source': str(source), 'status': 'orphan',
         'reason': 'absent from feature store'}
        for video_id in orphans
    ])


def uniform_boundaries(num_frames, shot_len):
    shot_len = max(1, int(shot_len))
    return list(range(0, num_frames, shot_len)) + [num_frames]


def change_points_to_boundaries(change_points, num_frames):
    """Inclusive [start, end] shot rows to a boundary list ending at T."""
    starts = sorted(int(start) for start, _ in change_points)
    if not starts or starts[0] != 0:
        starts = [0] + starts
    return starts + [num_frames]


def stride_boundaries(boundaries, frame_stride, num_frames):
    """
    Map boundaries in original frame indices onto every ``frame_stride``-th
    frame. A shot starting at frame ``b`` starts at strided index
    ``ceil(b / frame_stride)``; shots that collapse are merged.
    """
    if frame_stride == 1:
        return list(boundaries)
    starts = {-(-int(b) // frame_stride) for b in list(boundaries)[:-1]}
    starts = sorted(start for start in starts if 0 < start < num_frames)
    return [0] + starts + [num_frames]


def default_shot_len(fps=None):
    dataset = settings.VIDSUM['dataset']
    fps = dataset['fps'] if fps is None else fps
    return max(1, int(round(dataset['fallback_shot_seconds'] * fps)))


def _summary(video_id, user_scores, boundaries, shot_len, frame_stride=1):
    """Stride full-rate annotator scores and boundaries down to the feature rate."""
    user_scores = np.asarray(user_scores, dtype=np.float64)
    if user_scores.ndim != 2:
        raise AnnotationFormatError(f'{video_id}: user scores must be annotators × frames')
    user_scores = user_scores[:, ::frame_stride]
    num_frames = user_scores.shape[1]
    synthetic = boundaries is None
    if synthetic:
        logger.info('%s: no shot boundaries, using uniform %d-frame shots', video_id, shot_len)
        boundaries = uniform_boundaries(num_frames, shot_len)
    else:
        boundaries = stride_boundaries(boundaries, frame_stride, num_frames)
    return validate(GroundTruthSummary.from_annotators(
        video_id, user_scores, boundaries, synthetic_shots=synthetic,
    ))


def _read_json_records(directory, shot_len, frame_stride):
    summaries = []
    for path in sorted(directory.glob('*.json')):
        if path.name in NON_RECORD_FILES:
            continue
        record = _load_json(path)
        video_id = record.get('video_id', path.stem)
        rows = record.get('user_scores')
        if not rows:
            raise AnnotationFormatError(f'{path}: no user_scores')
        lengths = {len(row) for row in rows}
        if len(lengths) != 1:
            raise AnnotationFormatError(f'{path}: annotator score lengths differ {sorted(lengths)}')
        num_frames = lengths.pop()
        declared = record.get('n_frames')
        if declared is not None and int(declared) != num_frames:
            raise AnnotationFormatError(
                f'{path}: annotator scores have {num_frames} frames, record declares {declared}'
            )
        if 'shot_boundaries' in record:
            boundaries = record['shot_boundaries']
        elif 'change_points' in record:
            boundaries = change_points_to_boundaries(record['change_points'], num_frames)
        else:
            boundaries = None
        summaries.append(_summary(video_id, rows, boundaries, shot_len, frame_stride))
    return summaries


def _read_tvsum_tsv(directory, shot_len, frame_stride):
    per_video = {}
    for path in sorted(directory.glob('*.tsv')):
        with open(path, encoding='utf-8', newline='') as handle:
            for row in csv.reader(handle, delimiter='\t'):
                if len(row) < 3:
                    continue
                video_id, _, scores = row[:3]
                per_video.setdefault(video_id, []).append(
                    [float(value) for value in scores.split(',')]
                )
    shots = {}
    shots_file = directory / SHOTS_FILENAME
    if shots_file.exists():
        shots = _load_json(shots_file)
    summaries = []
    for video_id in sorted(per_video):
        rows = per_video[video_id]
        if len({len(r) for r in rows}) != 1:
            raise AnnotationFormatError(f'{video_id}: annotator score lengths differ')
        boundaries = None
        if video_id in shots:
            boundaries = change_points_to_boundaries(shots[video_id], len(rows[0]))
        summaries.append(_summary(video_id, rows, boundaries, shot_len, frame_stride))
    return summaries


def _read_summe_mat(directory, shot_len, frame_stride):
    from scipy.io import loadmat

    summaries = []
    for path in sorted(directory.glob('*.mat')):
        mat = loadmat(str(path))
        if 'user_score' not in mat:
            raise AnnotationFormatError(f'{path}: no user_score matrix')
        user_scores = np.asarray(mat['user_score'], dtype=np.float64).T
        boundaries = None
        if 'shot_boundaries' in mat:
            boundaries = [int(b) for b in np.ravel(mat['shot_boundaries'])]
        summaries.append(_summary(path.stem, user_scores, boundaries, shot_len, frame_stride))
    return summaries


def ingest_summary_dataset(path, layout, shot_len=None, frame_stride=1):
    """
    Load per-video ground truth summaries from a TVSum or SumMe directory.

    Canonical per-video JSON records are read first; a TVSum TSV or SumMe
    ``.mat`` files are read when no JSON records are present.
    """
    if layout not in LAYOUTS:
        raise AnnotationFormatError(f'unknown layout {layout!r}, expected one of {LAYOUTS}')
    directory = Path(path)
    if not directory.is_dir():
        raise AnnotationFormatError(f'{directory} is not a directory')
    shot_len = shot_len or default_shot_len()
    summaries = _read_json_records(directory, shot_len, frame_stride)
    if not summaries:
        reader = _read_tvsum_tsv if layout == LAYOUT_TVSUM else _read_summe_mat
        summaries = reader(directory, shot_len, frame_stride)
    low, high = EXPECTED_ANNOTATORS[layout]
    for summary in summaries:
        if not low <= summary.num_annotators <= high:
            logger.warning(
                '%s: %d annotators, %s releases ship %d-%d',
                summary.video_id, summary.num_annotators, layout, low, high,
            )
    return sorted(summaries, key=lambda s: s.video_id)


def summary_to_record(summary: GroundTruthSummary):
    """Canonical JSON record for a ground truth summary."""
    record = {
        'video_id': summary.video_id,
        'n_frames': summary.num_frames,
        'user_scores': summary.annotator_scores.tolist(),
    }
    if not summary.synthetic_shots:
        record['shot_boundaries'] = list(summary.shot_boundaries)
    return record
