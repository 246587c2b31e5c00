"""
Bipartite matching of proposals to caption events, and caption decoding.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from core.domain import CaptionerOutput, DenseCaptionAnnotation
from objectives.losses import pairwise_giou

logger = logging.getLogger(__name__)

# Cost perturbation per proposal index; far below any real cost gap.
TIE_BREAK = 1e-9


@dataclass(frozen=True)
class Matching:
    """``pairs`` maps gt event index to proposal index, sorted by event."""

    pairs: tuple = ()
    dropped_events: tuple = ()

    def __len__(self):
        return len(self.pairs)

    def proposal_for(self, event):
        return dict(self.pairs).get(event)


@dataclass(frozen=True)
class DecodedCaption:
    start_sec: float
    end_sec: float
    sentence: str
    confidence: float

    def as_dict(self):
        return {
            'segment': [self.start_sec, self.end_sec],
            'sentence': self.sentence,
            'confidence': self.confidence,
        }


def matching_cost(pred: CaptionerOutput, gt_segments, giou_weight, cls_weight):
    """K×G cost λ_giou·(1 − gIoU) + λ_cls·(1 − σ(confidence))."""
    with torch.no_grad():
        segments = pred.start_end().double()
        gt = torch.as_tensor(np.asarray(gt_segments), dtype=torch.float64).reshape(-1, 2)
        giou = pairwise_giou(segments, gt)
        confidence = torch.sigmoid(pred.confidence_logits.double()).unsqueeze(1)
        cost = giou_weight * (1 - giou) + cls_weight * (1 - confidence)
    return cost.numpy()


def match_proposals(pred: CaptionerOutput, gt: DenseCaptionAnnotation, weights=(4.0, 2.0)) -> Matching:
    num_events = len(gt.events)
    if num_events == 0:
        return Matching()
    num_queries = len(pred)
    kept = list(range(num_events))
    dropped = ()
    if num_events > num_queries:
        lengths = [event.length_sec for event in gt.events]
        kept = sorted(sorted(kept, key=lambda i: (-lengths[i], i))[:num_queries])
        dropped = tuple(sorted(set(range(num_events)) - set(kept)))
        logger.warning(
            '%s: %d events for %d queries, keeping the %d longest',
            gt.video_id, num_events, num_queries, num_queries,
        )
    giou_weight, cls_weight = weights
    cost = matching_cost(pred, gt.normalized_segments()[kept], giou_weight, cls_weight)
    cost = cost + TIE_BREAK * np.arange(num_queries)[:, None]
    proposals, columns = linear_sum_assignment(cost)
    pairs = sorted((kept[column], int(proposal)) for proposal, column in zip(proposals, columns))
    return Matching(pairs=tuple(pairs), dropped_events=dropped)


def decode_captions(pred: CaptionerOutput, confidence_threshold, duration_sec, vocab):
    """
    Proposals whose confidence exceeds the threshold, argmax-decoded and
    denormalized to seconds, ordered by start time.
    """
    with torch.no_grad():
        confidence = torch.sigmoid(pred.confidence_logits.double())
        bounds = pred.start_end().double().clamp(0.0, 1.0) * duration_sec
        tokens = pred.caption_logits.argmax(dim=-1)
    decoded = []
    for index in range(len(pred)):
        if not confidence[index].item() > confidence_threshold:
            continue
        start, end = bounds[index].tolist()
        if end <= start:
            continue
        sentence = ' '.join(vocab.decode(tokens[index].tolist()))
        decoded.append((start, index, DecodedCaption(start, end, sentence, confidence[index].item())))
    return [caption for _, _, caption in sorted(decoded, key=lambda item: item[:2])]
