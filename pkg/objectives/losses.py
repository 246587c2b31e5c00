"""
Training objectives.

Every loss takes torch tensors (or the matching domain objects) and returns
a scalar tensor, so the same code serves training, 64-bit gradient checks
and the worked examples in the tests.
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from django.core.exceptions import ValidationError
from torchvision.ops import sigmoid_focal_loss

from core.domain import PAD_INDEX, UNK_INDEX, ClipPrior, SummaryScores
from core.exceptions import check_same_length

logger = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
MAX_VARIANCE = 0.25

CAPTION_TERMS = ('giou', 'cls', 'ec', 'pred')
TOTAL_TERMS = ('cap', 'prior', 'len', 'var')


@dataclass(frozen=True)
class LossWeights:
    beta_giou: float = 4.0
    beta_cls: float = 2.0
    beta_ec: float = 0.5
    beta_pred: float = 0.5
    beta_cap: float = 2.0
    beta_prior: float = 10.0
    beta_len: float = 0.5
    beta_var: float = 0.5
    target_length: float = 0.3

    def clean(self):
        for name, value in self.__dict__.items():
            if name != 'target_length' and value < 0:
                raise ValidationError({name: ValidationError('weights must be non-negative', code='min_value')})
        if not 0 < self.target_length < 1:
            raise ValidationError({'target_length': ValidationError('l must be in (0, 1)', code='range')})


def _vector(values, dtype=None):
    if isinstance(values, SummaryScores):
        values = torch.tensor(values.scores)
    elif isinstance(values, ClipPrior):
        values = torch.tensor(values.prior)
    elif not isinstance(values, torch.Tensor):
        values = torch.as_tensor(np.asarray(values, dtype=np.float64))
    return values if dtype is None else values.to(dtype)


def giou_1d(a, b):
    """Generalized IoU of 1-D segments given as (..., 2) start/end pairs."""
    a = _vector(a)
    b = _vector(b).to(a.dtype)
    if ((a[..., 1] <= a[..., 0]).any() or (b[..., 1] <= b[..., 0]).any()):
        raise ValidationError('degenerate segment: start must be < end', code='segment_bounds')
    intersection = (torch.minimum(a[..., 1], b[..., 1]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    union = (a[..., 1] - a[..., 0]) + (b[..., 1] - b[..., 0]) - intersection
    hull = torch.maximum(a[..., 1], b[..., 1]) - torch.minimum(a[..., 0], b[..., 0])
    return intersection / union - (hull - union) / hull


def pairwise_giou(pred, gt):
    """K×G matrix of gIoU between every predicted and ground truth segment."""
    return giou_1d(pred.unsqueeze(1).expand(-1, gt.shape[0], -1), gt.unsqueeze(0).expand(pred.shape[0], -1, -1))


def focal_loss(confidence_logits, matched_mask):
    confidence_logits = _vector(confidence_logits)
    targets = _vector(matched_mask, confidence_logits.dtype)
    check_same_length('confidence_logits', confidence_logits, 'matched_mask', targets)
    return sigmoid_focal_loss(
        confidence_logits, targets, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA, reduction='mean',
    )


def event_count_loss(count_logits, gt_count):
    count_logits = _vector(count_logits)
    target = min(max(int(gt_count), 0), count_logits.shape[-1] - 1)
    return F.cross_entropy(
        count_logits.unsqueeze(0), torch.tensor([target], device=count_logits.device)
    )


def caption_token_loss(caption_logits, gt_tokens, vocab=None):
    """
    Teacher-forced token cross-entropy over non-PAD positions.

    ``gt_tokens`` holds target ids (or words when ``vocab`` is given); it is
    truncated or PAD-padded to the logit length and out-of-vocabulary
    entries become UNK.
    """
    length, vocab_size = caption_logits.shape
    if vocab is not None:
        ids = [vocab.lookup(token) for token in gt_tokens]
    else:
        ids = [int(token) for token in gt_tokens]
    ids = [i if 0 <= i < vocab_size else UNK_INDEX for i in ids][:length]
    ids += [PAD_INDEX] * (length - len(ids))
    target = torch.tensor(ids, device=caption_logits.device)
    if (target == PAD_INDEX).all():
        logger.warning('Caption target is all padding, token loss defined as 0')
        return caption_logits.sum() * 0
    return F.cross_entropy(caption_logits, target, ignore_index=PAD_INDEX)


def caption_loss_terms(pred, gt, matching, vocab):
    """
    The four caption components for one video.

    ``pred.caption_logits`` rows of matched proposals must be teacher-forced
    on the matched event's sentence.
    """
    zero = pred.confidence_logits.sum() * 0
    pairs = list(matching.pairs)
    matched_mask = torch.zeros_like(pred.confidence_logits)
    for _, proposal in pairs:
        matched_mask[proposal] = 1.0
    terms = {
        'cls': focal_loss(pred.confidence_logits, matched_mask),
        'ec': event_count_loss(pred.event_count_logits, len(gt.events)),
    }
    if not pairs:
        terms['giou'] = zero
        terms['pred'] = zero
        return {name: terms[name] for name in CAPTION_TERMS}

    events = [e for e, _ in pairs]
    proposals = [p for _, p in pairs]
    gt_segments = torch.as_tensor(gt.normalized_segments()[events], dtype=pred.segments.dtype)
    pred_segments = pred.start_end()[proposals]
    terms['giou'] = (1 - giou_1d(pred_segments, gt_segments)).mean()

    length = pred.caption_logits.shape[1]
    token_losses = []
    for event, proposal in pairs:
        sentence = gt.events[event].sentence
        target = vocab.target_ids(sentence, length)
        token_losses.append(caption_token_loss(pred.caption_logits[proposal], target))
    terms['pred'] = torch.stack(token_losses).mean()
    return {name: terms[name] for name in CAPTION_TERMS}


def caption_loss(pred, gt, matching, weights: LossWeights, vocab):
    return combine_caption_terms(caption_loss_terms(pred, gt, matching, vocab), weights)


def combine_caption_terms(terms, weights: LossWeights):
    return (
        weights.beta_giou * terms['giou']
        + weights.beta_cls * terms['cls']
        + weights.beta_ec * terms['ec']
        + weights.beta_pred * terms['pred']
    )


def prior_loss(scores, prior):
    scores = _vector(scores)
    prior = _vector(prior, scores.dtype)
    check_same_length('scores', scores, 'prior', prior)
    return torch.mean((prior * scores - prior) ** 2)


def length_loss(scores, target_length):
    return (_vector(scores).mean() - target_length) ** 2


def variance_loss(scores):
    return MAX_VARIANCE - _vector(scores).var(unbiased=False)


def total_loss(components, weights: LossWeights):
    return (
        weights.beta_cap * components['cap']
        + weights.beta_prior * components['prior']
        + weights.beta_len * components['len']
        + weights.beta_var * components['var']
    )


def finetune_mse(scores, gt_scores):
    scores = _vector(scores)
    gt_scores = _vector(gt_scores, scores.dtype)
    check_same_length('scores', scores, 'gt_scores', gt_scores)
    return F.mse_loss(scores, gt_scores)


def rescale_scores(consensus):
    """Min-max rescale consensus scores to [0, 1]; a constant vector maps to 0.5."""
    consensus = np.asarray(consensus, dtype=np.float64)
    low, high = consensus.min(), consensus.max()
    if high - low <= 0:
        return np.full_like(consensus, 0.5)
    return (consensus - low) / (high - low)
