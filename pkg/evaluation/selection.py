"""
Keyshot selection and the multi-annotator F1 protocol.

Frame scores are averaged per shot, a 0/1 knapsack picks the shots that
maximise total score under the frame budget, and the resulting frame mask
is compared with user summaries built the same way from each annotator's
scores.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from core.domain import GroundTruthSummary, SummaryScores
from core.exceptions import MissingVideoError, check_same_length

logger = logging.getLogger(__name__)

PROTOCOL_TVSUM_AVG = 'tvsum_avg'
PROTOCOL_SUMME_MAX = 'summe_max'
PROTOCOLS = (PROTOCOL_TVSUM_AVG, PROTOCOL_SUMME_MAX)

USER_SUMMARY_SOURCE = 'knapsack_over_annotator_scores'

VALUE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Shot:
    start_frame: int
    end_frame: int
    mean_score: float

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame

    @property
    def value(self) -> float:
        return self.mean_score * self.length


@dataclass(frozen=True)
class EvaluationReport:
    per_video: dict
    mean_f1: float
    protocol: str
    budget_fraction: float

    def as_dict(self):
        return {
            'per_video': dict(sorted(self.per_video.items())),
            'mean_f1': self.mean_f1,
            'protocol': self.protocol,
            'budget_fraction': self.budget_fraction,
            'user_summaries': USER_SUMMARY_SOURCE,
        }


def _as_vector(scores):
    if isinstance(scores, SummaryScores):
        return scores.scores.astype(np.float64)
    return np.asarray(scores, dtype=np.float64)


def segment_shots(boundaries, scores):
    """
    Shots between consecutive boundaries, scored by the mean frame score.

    ``boundaries`` may be a GroundTruthSummary or a boundary list.
    """
    if isinstance(boundaries, GroundTruthSummary):
        boundaries = boundaries.shot_boundaries
    scores = _as_vector(scores)
    boundaries = [int(b) for b in boundaries]
    num_frames = len(scores)
    if len(boundaries) < 2 or boundaries[0] != 0 or boundaries[-1] != num_frames:
        raise ValidationError(
            {'shot_boundaries': ValidationError(
                f'boundaries {boundaries[:3]}... do not tile [0, {num_frames})', code='tiling'
            )}
        )
    if any(start >= end for start, end in zip(boundaries, boundaries[1:])):
        raise ValidationError({'shot_boundaries': ValidationError('boundaries must increase', code='ordering')})
    return [
        Shot(start, end, float(scores[start:end].mean()))
        for start, end in zip(boundaries, boundaries[1:])
    ]


def knapsack_select(shots, budget_frames):
    """
    Exact 0/1 knapsack over shots; returns a boolean mask over ``shots``.

    Shots with non-positive value never help and are left out. Among optimal
    selections the lexicographically smallest index set is returned.
    """
    budget = max(0, int(budget_frames))
    count = len(shots)
    selection = np.zeros(count, dtype=bool)
    if budget == 0 or count == 0:
        return selection

    weights = [shot.length for shot in shots]
    values = [shot.value for shot in shots]
    # best[i, c]: best value from shots i.. with capacity c
    best = np.zeros((count + 1, budget + 1), dtype=np.float64)
    for i in range(count - 1, -1, -1):
        best[i] = best[i + 1]
        weight, value = weights[i], values[i]
        if value > 0 and weight <= budget:
            take = value + best[i + 1, : budget + 1 - weight]
            best[i, weight:] = np.maximum(best[i + 1, weight:], take)

    capacity = budget
    for i in range(count):
        weight, value = weights[i], values[i]
        if value <= 0 or weight > capacity:
            continue
        if abs(value + best[i + 1, capacity - weight] - best[i, capacity]) <= VALUE_TOLERANCE:
            selection[i] = True
            capacity -= weight
    return selection


def binarize(selection, shots, num_frames):
    mask = np.zeros(num_frames, dtype=np.int8)
    for selected, shot in zip(selection, shots):
        if selected:
            mask[shot.start_frame:shot.end_frame] = 1
    return mask


def f1_score(machine, user):
    machine = np.asarray(machine, dtype=np.int64)
    user = np.asarray(user, dtype=np.int64)
    check_same_length('machine', machine, 'user', user)
    if machine.sum() == 0 or user.sum() == 0:
        return 0.0
    overlap = float((machine * user).sum())
    precision = overlap / machine.sum()
    recall = overlap / user.sum()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def summary_budget(num_frames, budget_fraction):
    return int(math.floor(num_frames * budget_fraction))


def keyshot_summary(scores, boundaries, budget_fraction):
    """Frame mask of the knapsack selection for one score vector."""
    scores = _as_vector(scores)
    shots = segment_shots(boundaries, scores)
    selection = knapsack_select(shots, summary_budget(len(scores), budget_fraction))
    return binarize(selection, shots, len(scores)), shots, selection


def video_f1(scores, gt: GroundTruthSummary, protocol, budget_fraction):
    scores = _as_vector(scores)
    check_same_length(f'{gt.video_id} scores', scores, 'ground truth frames', gt.consensus_scores)
    machine, _, _ = keyshot_summary(scores, gt.shot_boundaries, budget_fraction)
    f1s = [
        f1_score(machine, keyshot_summary(row, gt.shot_boundaries, budget_fraction)[0])
        for row in gt.annotator_scores
    ]
    if protocol == PROTOCOL_SUMME_MAX:
        return max(f1s)
    return float(np.mean(f1s))


def evaluate_dataset(scores, gts, protocol=PROTOCOL_TVSUM_AVG, budget_fraction=0.15, video_ids=None):
    """
    Per-video and mean F1.

    ``scores`` maps video id to a score vector; ``gts`` is an iterable of
    GroundTruthSummary (or a mapping by id). ``video_ids`` restricts the
    evaluation, e.g. to a held-out split.
    """
    if protocol not in PROTOCOLS:
        raise ValidationError({'protocol': ValidationError(f'unknown protocol {protocol!r}', code='invalid_choice')})
    gts = dict(gts) if isinstance(gts, dict) else {gt.video_id: gt for gt in gts}
    wanted = set(video_ids) if video_ids is not None else set(scores) | set(gts)
    missing = (wanted - set(scores)) | (wanted - set(gts))
    if missing:
        raise MissingVideoError(missing)
    per_video = {
        video_id: video_f1(scores[video_id], gts[video_id], protocol, budget_fraction)
        for video_id in sorted(wanted)
    }
    mean_f1 = float(np.mean([per_video[video_id] for video_id in sorted(per_video)])) if per_video else 0.0
    logger.info('%s F1 over %d videos: %.4f', protocol, len(per_video), mean_f1)
    return EvaluationReport(per_video, mean_f1, protocol, budget_fraction)
