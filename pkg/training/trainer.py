"""
Training loops.

Pre-training optimizes the caption objective plus the prior, length and
variance terms over (features, captions, prior) examples. Fine-tuning runs
either the supervised MSE objective against rescaled annotator consensus or
the same caption objective on the target dataset's caption sidecar.

One optimizer update is taken per ``batch_size`` videos; data order is
shuffled each epoch from the run seed.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from captioner.matching import match_proposals
from core.domain import ClipPrior, DenseCaptionAnnotation, FrameFeatures, GroundTruthSummary
from core.exceptions import MissingAnnotationError, NonFiniteLossError
from core.utils import seed_everything, write_json, write_json_lines
from objectives.losses import (
    LossWeights,
    caption_loss_terms,
    combine_caption_terms,
    finetune_mse,
    length_loss,
    prior_loss,
    rescale_scores,
    total_loss,
    variance_loss,
)
from summarizer.model import weight_features

from .checkpoints import ModelBundle, save_checkpoint
from .forms import MODE_FINETUNE_SUP, MODE_FINETUNE_WEAK, MODE_PRETRAIN, TrainConfig

logger = logging.getLogger(__name__)

HISTORY_FILENAME = 'history.jsonl'
EPOCHS_FILENAME = 'epochs.jsonl'
SPLIT_FILENAME = 'split.json'
BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'

FINETUNE_SUP = 'sup'
FINETUNE_WEAK = 'weak'
FINETUNE_MODES = {FINETUNE_SUP: MODE_FINETUNE_SUP, FINETUNE_WEAK: MODE_FINETUNE_WEAK}


@dataclass(frozen=True)
class TrainingExample:
    """One video with whatever annotations the current mode needs."""

    features: FrameFeatures
    annotation: Optional[DenseCaptionAnnotation] = None
    prior: Optional[ClipPrior] = None
    summary: Optional[GroundTruthSummary] = None

    @property
    def video_id(self) -> str:
        return self.features.video_id


@dataclass(frozen=True)
class StepReport:
    step: int
    epoch: int
    video_ids: tuple
    components: dict
    total: float
    lr: float
    wall_ms: float

    def as_record(self):
        return {
            'step': self.step,
            'epoch': self.epoch,
            'video_ids': list(self.video_ids),
            'components': dict(self.components),
            'total': self.total,
            'lr': self.lr,
            'wall_ms': self.wall_ms,
        }


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    best_loss: float
    improved: bool

    def as_record(self):
        return {
            'epoch': self.epoch,
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
            'best_loss': self.best_loss,
            'improved': self.improved,
        }


@dataclass
class TrainingResult:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    checkpoint_hashes: dict = field(default_factory=dict)
    split: Optional[dict] = None

    @property
    def best_loss(self):
        return self.epochs[-1].best_loss if self.epochs else None


def split_videos(video_ids, ratio, rng):
    """Shuffle ``video_ids`` and keep ``round(ratio * n)`` of them (at least one) for training."""
    video_ids = sorted(video_ids)
    order = [video_ids[i] for i in rng.permutation(len(video_ids))]
    num_train = min(len(order), max(1, int(round(ratio * len(order)))))
    return sorted(order[:num_train]), sorted(order[num_train:])


class Trainer:
    """
    Owns the optimizer for one training run over a ModelBundle.

    The bundle is updated in place. Checkpoints and the JSON-lines history
    are written under ``out_dir`` when one is given.
    """

    def __init__(self, bundle: ModelBundle, config: TrainConfig, weights: LossWeights):
        self.bundle = bundle
        self.config = config
        self.weights = weights
        self.rng = seed_everything(config.seed)
        self.step = 0
        self.epoch = 0
        if config.freeze_captioner:
            bundle.captioner.requires_grad_(False)
        self.parameters = [
            parameter
            for module in (bundle.summarizer, bundle.captioner)
            for parameter in module.parameters()
            if parameter.requires_grad
        ]
        self.optimizer = torch.optim.Adam(self.parameters, lr=config.learning_rate)

    # objectives

    def _teacher_inputs(self, annotation, matching, num_queries):
        vocab = self.bundle.vocab
        length = self.bundle.captioner_config.max_caption_len
        rows = [vocab.input_ids((), length) for _ in range(num_queries)]
        for event, proposal in matching.pairs:
            rows[proposal] = vocab.input_ids(annotation.events[event].sentence, length)
        return torch.tensor(rows, dtype=torch.long)

    def caption_objective(self, example: TrainingExample, use_prior=True):
        """Loss components of the caption-driven objective for one video."""
        if example.annotation is None:
            raise MissingAnnotationError(f'{example.video_id}: no caption annotation')
        summarizer, captioner = self.bundle.summarizer, self.bundle.captioner
        captioner_config = self.bundle.captioner_config

        features = example.features.as_tensor()
        scores = summarizer(features)
        proposal = captioner.propose(weight_features(features, scores))
        matching = match_proposals(
            proposal,
            example.annotation,
            weights=(captioner_config.match_giou_weight, captioner_config.match_cls_weight),
        )
        pred = captioner.describe(proposal, self._teacher_inputs(example.annotation, matching, len(proposal)))

        components = caption_loss_terms(pred, example.annotation, matching, self.bundle.vocab)
        components['cap'] = combine_caption_terms(components, self.weights)
        if use_prior and example.prior is not None:
            components['prior'] = prior_loss(scores, example.prior)
        else:
            components['prior'] = scores.sum() * 0
        components['len'] = length_loss(scores, self.weights.target_length)
        components['var'] = variance_loss(scores)
        components['total'] = total_loss(components, self.weights)
        return components

    def supervised_objective(self, example: TrainingExample):
        if example.summary is None:
            raise MissingAnnotationError(f'{example.video_id}: no ground truth summary')
        scores = self.bundle.summarizer(example.features.as_tensor())
        target = torch.as_tensor(rescale_scores(example.summary.consensus_scores), dtype=scores.dtype)
        mse = finetune_mse(scores, target)
        return {'mse': mse, 'total': mse}

    def objective_for(self, mode):
        if mode == MODE_FINETUNE_SUP:
            return self.supervised_objective
        if mode == MODE_FINETUNE_WEAK:
            return lambda example: self.caption_objective(example, use_prior=self.config.use_prior_in_finetune)
        return self.caption_objective

    # updates

    def _train_mode(self):
        self.bundle.summarizer.train()
        self.bundle.captioner.train(not self.config.freeze_captioner)

    def _eval_mode(self):
        self.bundle.summarizer.eval()
        self.bundle.captioner.eval()

    def _checked(self, example, components):
        if not torch.isfinite(components['total']):
            snapshot = {name: float(value.detach()) for name, value in components.items()}
            raise NonFiniteLossError({'video_id': example.video_id, **snapshot})
        return components

    def update(self, examples, objective) -> StepReport:
        """One optimizer update over ``examples``; the loss is their mean total."""
        started = time.perf_counter()
        self._train_mode()
        self.optimizer.zero_grad(set_to_none=True)
        per_video = [self._checked(example, objective(example)) for example in examples]
        total = torch.stack([components['total'] for components in per_video]).mean()
        total.backward()
        if self.config.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.parameters, self.config.grad_clip_norm)
        self.optimizer.step()
        self.step += 1
        names = [name for name in per_video[0] if name != 'total']
        return StepReport(
            step=self.step,
            epoch=self.epoch,
            video_ids=tuple(example.video_id for example in examples),
            components={
                name: float(np.mean([components[name].item() for components in per_video]))
                for name in names
            },
            total=total.item(),
            lr=self.optimizer.param_groups[0]['lr'],
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )

    def pretrain_step(self, example: TrainingExample) -> StepReport:
        return self.update([example], self.caption_objective)

    def mean_loss(self, examples, objective):
        """Mean total loss over ``examples`` in eval mode, without updating."""
        self._eval_mode()
        try:
            with torch.no_grad():
                totals = [objective(example)['total'].item() for example in examples]
        finally:
            self._train_mode()
        return float(np.mean(totals))

    # loops

    def _save(self, out_dir, name, result):
        if out_dir is None:
            return
        self.bundle.train_state = {'epoch': self.epoch, 'step': self.step, 'seed': self.config.seed}
        result.checkpoint_hashes[name] = save_checkpoint(self.bundle, Path(out_dir) / name)

    def fit(self, train, epochs, mode=MODE_PRETRAIN, held_out=(), out_dir=None) -> TrainingResult:
        """
        Run ``epochs`` epochs over ``train``.

        The best checkpoint tracks the held-out loss when a held-out set is
        given, the epoch's mean training loss otherwise.
        """
        if epochs and not train:
            raise MissingAnnotationError('no training videos')
        objective = self.objective_for(mode)
        result = TrainingResult()
        best = math.inf
        batch_size = self.config.batch_size
        for _ in range(epochs):
            self.epoch += 1
            order = self.rng.permutation(len(train))
            reports = []
            for start in range(0, len(order), batch_size):
                batch = [train[i] for i in order[start:start + batch_size]]
                reports.append(self.update(batch, objective))
            result.steps.extend(reports)

            train_loss = float(np.mean([report.total for report in reports]))
            val_loss = self.mean_loss(held_out, objective) if held_out else None
            monitored = train_loss if val_loss is None else val_loss
            improved = monitored < best
            if improved:
                best = monitored
                self._save(out_dir, BEST_CHECKPOINT, result)
            result.epochs.append(EpochReport(self.epoch, train_loss, val_loss, best, improved))
            logger.info(
                'epoch %d: train %.5f val %s best %.5f',
                self.epoch, train_loss, 'n/a' if val_loss is None else f'{val_loss:.5f}', best,
            )
            if self.config.checkpoint_every and self.epoch % self.config.checkpoint_every == 0:
                self._save(out_dir, f'epoch_{self.epoch:04d}.ckpt', result)

        self._save(out_dir, LAST_CHECKPOINT, result)
        if not result.epochs:
            self._save(out_dir, BEST_CHECKPOINT, result)
        if out_dir is not None:
            write_json_lines(Path(out_dir) / HISTORY_FILENAME, [report.as_record() for report in result.steps])
            write_json_lines(Path(out_dir) / EPOCHS_FILENAME, [report.as_record() for report in result.epochs])
        return result

    def pretrain(self, examples, epochs, out_dir=None) -> TrainingResult:
        return self.fit(list(examples), epochs, MODE_PRETRAIN, out_dir=out_dir)

    def finetune(self, examples, mode, epochs, split=1.0, out_dir=None) -> TrainingResult:
        """
        Fine-tune on a ``split`` fraction of ``examples`` and validate on the rest.

        ``mode`` is ``sup`` (needs ground truth summaries) or ``weak`` (needs
        caption annotations).
        """
        if mode not in FINETUNE_MODES:
            raise ValueError(f'unknown fine-tuning mode {mode!r}')
        examples = {example.video_id: example for example in examples}
        attribute, kind = ('summary', 'ground truth summaries') if mode == FINETUNE_SUP else ('annotation', 'captions')
        missing = sorted(video_id for video_id, ex in examples.items() if getattr(ex, attribute) is None)
        if missing:
            raise MissingAnnotationError(f'{mode} fine-tuning needs {kind}; missing for {", ".join(missing)}')

        train_ids, held_out_ids = split_videos(examples, split, self.rng)
        logger.info('Fine-tuning (%s) on %d videos, %d held out', mode, len(train_ids), len(held_out_ids))
        split_record = {'ratio': split, 'seed': self.config.seed, 'train': train_ids, 'held_out': held_out_ids}
        if out_dir is not None:
            write_json(Path(out_dir) / SPLIT_FILENAME, split_record)
        result = self.fit(
            [examples[video_id] for video_id in train_ids],
            epochs,
            FINETUNE_MODES[mode],
            held_out=[examples[video_id] for video_id in held_out_ids],
            out_dir=out_dir,
        )
        result.split = split_record
        return result
