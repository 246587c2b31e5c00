import io
import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from captioner.model import CaptionerConfig, caption_forward
from captioner.vocab import Vocabulary
from clip_prior.prior import PriorConfig, PriorGenerator
from core.domain import FrameFeatures
from core.exceptions import CheckpointError, ConfigMismatchError, MissingAnnotationError, NonFiniteLossError
from core.utils import read_json_lines
from dataset_io.synthetic import make_synthetic_corpus
from encoders.bridge import stub_encoder
from objectives.losses import LossWeights
from summarizer.model import SummarizerConfig, summarize, weight_features

from .checkpoints import MAGIC, build_bundle, load_checkpoint, save_checkpoint
from .forms import TrainConfig, TrainConfigForm
from .trainer import (
    BEST_CHECKPOINT,
    EPOCHS_FILENAME,
    HISTORY_FILENAME,
    LAST_CHECKPOINT,
    SPLIT_FILENAME,
    Trainer,
    TrainingExample,
    split_videos,
)

SUMMARIZER = SummarizerConfig(embed_dim=32, num_layers=1, num_heads=4, mlp_ratio=2.0, dropout=0.0)
CAPTIONER = CaptionerConfig(
    num_queries=4, max_caption_len=8, embed_dim=32, enc_layers=1, dec_layers=1, num_heads=4, dropout=0.0,
)
FEATURE_DIM = 64
SMALL_MODEL_SETTINGS = [
    '--set', 'encoder.embed_dim=64',
    '--set', 'summarizer.embed_dim=32',
    '--set', 'summarizer.num_layers=1',
    '--set', 'captioner.embed_dim=32',
    '--set', 'captioner.enc_layers=1',
    '--set', 'captioner.dec_layers=1',
    '--set', 'captioner.num_queries=4',
    '--set', 'captioner.max_caption_len=8',
]


def synthetic_examples(num_videos=4, seed=0):
    handle = stub_encoder(embed_dim=FEATURE_DIM, seed=0)
    prior_config = PriorConfig()
    corpus = make_synthetic_corpus(handle, prior_config.labels, num_videos=num_videos, seed=seed)
    generator = PriorGenerator(handle, prior_config)
    examples = [
        TrainingExample(
            video.features,
            annotation=video.annotation,
            prior=generator.generate(video.features),
            summary=video.summary,
        )
        for video in corpus
    ]
    return corpus, examples


def small_bundle(examples, seed=0):
    vocab = Vocabulary.build([example.annotation for example in examples])
    return build_bundle(FEATURE_DIM, vocab, SUMMARIZER, CAPTIONER, seed=seed)


def parameters_of(bundle):
    return {
        f'{prefix}.{name}': value.detach().clone()
        for prefix, module in (('summarizer', bundle.summarizer), ('captioner', bundle.captioner))
        for name, value in module.state_dict().items()
    }


def same_parameters(first, second):
    return first.keys() == second.keys() and all(torch.equal(first[k], second[k]) for k in first)


def without_wall_clock(records):
    return [{key: value for key, value in record.items() if key != 'wall_ms'} for record in records]


class CheckpointTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus, cls.examples = synthetic_examples(num_videos=2)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'model.ckpt'
        self.bundle = small_bundle(self.examples)
        self.digest = save_checkpoint(self.bundle, self.path)

    def test_round_trip_reproduces_outputs(self):
        loaded = load_checkpoint(self.path, FEATURE_DIM, SUMMARIZER, CAPTIONER)
        features = self.examples[0].features
        before = summarize(self.bundle.summarizer, features)
        after = summarize(loaded.summarizer, features)
        self.assertTrue(np.array_equal(before.scores, after.scores))

        self.bundle.captioner.eval()
        loaded.captioner.eval()
        with torch.no_grad():
            weighted = weight_features(features, before)
            first = caption_forward(self.bundle.captioner, weighted)
            second = caption_forward(loaded.captioner, weighted)
        self.assertTrue(torch.equal(first.segments, second.segments))
        self.assertTrue(torch.equal(first.caption_logits, second.caption_logits))
        self.assertEqual(loaded.vocab, self.bundle.vocab)

    def test_different_width_is_rejected(self):
        with self.assertRaisesMessage(ConfigMismatchError, 'summarizer.embed_dim'):
            load_checkpoint(self.path, summarizer_config=replace(SUMMARIZER, embed_dim=64))

    def test_different_feature_dimension_is_rejected(self):
        with self.assertRaises(ConfigMismatchError):
            load_checkpoint(self.path, input_dim=512)

    def test_runtime_fields_follow_the_run(self):
        loaded = load_checkpoint(self.path, summarizer_config=replace(SUMMARIZER, dropout=0.2))
        self.assertEqual(loaded.summarizer_config.dropout, 0.2)

    def test_flipped_payload_byte(self):
        blob = bytearray(self.path.read_bytes())
        blob[-10] ^= 0xFF
        self.path.write_bytes(bytes(blob))
        with self.assertRaisesMessage(CheckpointError, 'hash mismatch'):
            load_checkpoint(self.path)

    def test_foreign_file(self):
        self.path.write_bytes(b'not a checkpoint' * 8)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        self.assertFalse(self.path.read_bytes().startswith(MAGIC))

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / 'absent.ckpt')


class TrainerTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus, cls.examples = synthetic_examples(num_videos=4)

    def trainer(self, seed=0, weights=None, **overrides):
        config = replace(TrainConfig(seed=seed), **overrides)
        return Trainer(small_bundle(self.examples, seed=seed), config, weights or LossWeights())

    def test_step_reports_every_component(self):
        report = self.trainer().pretrain_step(self.examples[0])
        self.assertEqual(
            set(report.components), {'giou', 'cls', 'ec', 'pred', 'cap', 'prior', 'len', 'var'}
        )
        self.assertTrue(all(np.isfinite(value) for value in report.components.values()))
        c = report.components
        expected = 2 * c['cap'] + 10 * c['prior'] + 0.5 * c['len'] + 0.5 * c['var']
        self.assertAlmostEqual(report.total, expected, delta=1e-4)
        self.assertEqual(report.video_ids, (self.examples[0].video_id,))
        self.assertEqual(report.lr, 5e-5)

    def test_zero_prior_weight(self):
        weights = LossWeights(beta_prior=0.0)
        report = self.trainer(weights=weights).pretrain_step(self.examples[1])
        c = report.components
        self.assertIn('prior', c)
        expected = 2 * c['cap'] + 0.5 * c['len'] + 0.5 * c['var']
        self.assertAlmostEqual(report.total, expected, delta=1e-4)

    def test_zero_learning_rate_changes_nothing(self):
        trainer = self.trainer(learning_rate=0.0)
        before = parameters_of(trainer.bundle)
        trainer.pretrain_step(self.examples[0])
        self.assertTrue(same_parameters(before, parameters_of(trainer.bundle)))

    def test_step_updates_parameters(self):
        trainer = self.trainer(learning_rate=1e-3)
        before = parameters_of(trainer.bundle)
        trainer.pretrain_step(self.examples[0])
        self.assertFalse(same_parameters(before, parameters_of(trainer.bundle)))

    def test_frozen_captioner(self):
        trainer = self.trainer(learning_rate=1e-3, freeze_captioner=True)
        captioner_before = {k: v for k, v in parameters_of(trainer.bundle).items() if k.startswith('captioner.')}
        trainer.pretrain_step(self.examples[0])
        captioner_after = {k: v for k, v in parameters_of(trainer.bundle).items() if k.startswith('captioner.')}
        self.assertTrue(same_parameters(captioner_before, captioner_after))

    def test_identical_seeds_give_identical_trajectories(self):
        first = self.trainer(seed=3).pretrain(self.examples, epochs=2)
        second = self.trainer(seed=3).pretrain(self.examples, epochs=2)
        self.assertEqual([r.total for r in first.steps], [r.total for r in second.steps])
        self.assertEqual([r.video_ids for r in first.steps], [r.video_ids for r in second.steps])

    def test_identical_seeds_give_identical_artifacts(self):
        with tempfile.TemporaryDirectory() as tmp:
            first_dir, second_dir = Path(tmp) / 'first', Path(tmp) / 'second'
            first = self.trainer(seed=3).pretrain(self.examples, epochs=2, out_dir=first_dir)
            second = self.trainer(seed=3).pretrain(self.examples, epochs=2, out_dir=second_dir)
            self.assertEqual(first.checkpoint_hashes, second.checkpoint_hashes)
            for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, EPOCHS_FILENAME):
                self.assertEqual((first_dir / name).read_bytes(), (second_dir / name).read_bytes())
            self.assertEqual(
                without_wall_clock(read_json_lines(first_dir / HISTORY_FILENAME)),
                without_wall_clock(read_json_lines(second_dir / HISTORY_FILENAME)),
            )

    def test_batches_accumulate_videos(self):
        result = self.trainer(batch_size=2).pretrain(self.examples, epochs=1)
        self.assertEqual(len(result.steps), 2)
        self.assertTrue(all(len(report.video_ids) == 2 for report in result.steps))

    def test_non_finite_loss(self):
        example = self.examples[0]
        rows = np.array(example.features.features)
        rows[0, 0] = np.nan
        source = example.features
        broken = replace(example, features=FrameFeatures(source.video_id, rows, source.fps, source.duration_sec))
        trainer = self.trainer()
        with self.assertRaises(NonFiniteLossError) as ctx:
            trainer.update([broken], trainer.supervised_objective)
        self.assertEqual(ctx.exception.snapshot['video_id'], example.video_id)
        self.assertIn('mse', ctx.exception.snapshot)

    def test_split_sizes(self):
        ids = [f'v{i:02d}' for i in range(25)]
        train, held_out = split_videos(ids, 0.8, np.random.default_rng(0))
        self.assertEqual((len(train), len(held_out)), (20, 5))
        self.assertEqual(sorted(train + held_out), ids)
        self.assertEqual(split_videos(ids, 1.0, np.random.default_rng(0))[1], [])

    def test_sup_finetune_needs_ground_truth(self):
        examples = [replace(example, summary=None) for example in self.examples]
        with self.assertRaisesMessage(MissingAnnotationError, 'ground truth'):
            self.trainer().finetune(examples, 'sup', epochs=1)

    def test_weak_finetune_needs_captions(self):
        examples = [replace(example, annotation=None) for example in self.examples]
        with self.assertRaisesMessage(MissingAnnotationError, 'captions'):
            self.trainer().finetune(examples, 'weak', epochs=1)

    def test_weak_finetune_without_prior(self):
        trainer = self.trainer(use_prior_in_finetune=False)
        components = trainer.objective_for('finetune_weak')(self.examples[0])
        self.assertEqual(components['prior'].item(), 0.0)

    def test_zero_epoch_finetune_keeps_the_input(self):
        with tempfile.TemporaryDirectory() as tmp:
            trainer = self.trainer()
            before = parameters_of(trainer.bundle)
            trainer.finetune(self.examples, 'weak', epochs=0, out_dir=tmp)
            for name in (LAST_CHECKPOINT, BEST_CHECKPOINT):
                loaded = load_checkpoint(Path(tmp) / name)
                self.assertTrue(same_parameters(before, parameters_of(loaded)))

    def test_sup_finetune_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            result = self.trainer(learning_rate=1e-3).finetune(
                self.examples, 'sup', epochs=3, split=0.75, out_dir=tmp,
            )
            split = json.loads((Path(tmp) / SPLIT_FILENAME).read_text())
            history = read_json_lines(Path(tmp) / HISTORY_FILENAME)
            epochs = read_json_lines(Path(tmp) / EPOCHS_FILENAME)
        self.assertEqual((len(split['train']), len(split['held_out'])), (3, 1))
        self.assertEqual(len(history), 9)
        self.assertEqual(set(history[0]), {'step', 'epoch', 'video_ids', 'components', 'total', 'lr', 'wall_ms'})
        self.assertEqual(set(history[0]['components']), {'mse'})
        best = [record['best_loss'] for record in epochs]
        self.assertEqual(best, sorted(best, reverse=True))
        self.assertTrue(all(record['val_loss'] is not None for record in epochs))
        self.assertEqual(result.best_loss, best[-1])


class TrainConfigFormTests(SimpleTestCase):

    def data(self, **overrides):
        data = {
            'learning_rate': 5e-5, 'batch_size': 1, 'epochs': 1, 'seed': 0, 'optimizer': 'adam',
            'mode': 'pretrain', 'checkpoint_every': 0, 'freeze_captioner': False,
            'grad_clip_norm': 1.0, 'split': 0.8, 'use_prior_in_finetune': True,
        }
        data.update(overrides)
        return data

    def test_defaults(self):
        form = TrainConfigForm(data=self.data())
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.to_config(), TrainConfig())

    def test_invalid_values(self):
        form = TrainConfigForm(data=self.data(learning_rate=-1, batch_size=0, optimizer='sgd', mode='other', split=0))
        self.assertEqual(set(form.errors), {'learning_rate', 'batch_size', 'optimizer', 'mode', 'split'})


class TrainingCommandTests(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def make_data(self, name, videos):
        call_command(
            'make_synthetic_data', '--out', str(self.root / name), '--videos', str(videos),
            *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )
        return self.root / name

    def pretrain(self, data, out, epochs):
        call_command(
            'pretrain', '--features', str(data / 'features'), '--captions', str(data / 'captions.json'),
            '--epochs', str(epochs), '--out', str(out), *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )

    def test_pretrain_history_and_manifest(self):
        data = self.make_data('anet', 3)
        self.pretrain(data, self.root / 'pretrain', epochs=5)
        history = read_json_lines(self.root / 'pretrain' / HISTORY_FILENAME)
        self.assertEqual(len(history), 15)
        manifest = json.loads((self.root / 'pretrain' / 'manifest.json').read_text())
        self.assertEqual(manifest['command'], 'pretrain')
        self.assertIn(LAST_CHECKPOINT, manifest['checkpoint_hashes'])
        self.assertEqual(manifest['label_set_hash'], PriorConfig().label_hash)

    def test_rerun_reproduces_checkpoints_and_history(self):
        data = self.make_data('anet', 2)
        self.pretrain(data, self.root / 'first', epochs=2)
        self.pretrain(data, self.root / 'second', epochs=2)
        for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, EPOCHS_FILENAME):
            self.assertEqual(
                (self.root / 'first' / name).read_bytes(), (self.root / 'second' / name).read_bytes(),
            )
        self.assertEqual(
            without_wall_clock(read_json_lines(self.root / 'first' / HISTORY_FILENAME)),
            without_wall_clock(read_json_lines(self.root / 'second' / HISTORY_FILENAME)),
        )
        manifests = [json.loads((self.root / run / 'manifest.json').read_text()) for run in ('first', 'second')]
        self.assertEqual(manifests[0]['checkpoint_hashes'], manifests[1]['checkpoint_hashes'])

    def test_weak_finetune_without_sidecar(self):
        data = self.make_data('tvsum', 2)
        self.pretrain(data, self.root / 'pretrain', epochs=0)
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'finetune', '--checkpoint', str(self.root / 'pretrain' / LAST_CHECKPOINT),
                '--features', str(data / 'features'), '--mode', 'weak', '--out', str(self.root / 'ft'),
                *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('--captions', str(ctx.exception))

    def test_weak_finetune_reports_orphans(self):
        data = self.make_data('tvsum', 2)
        self.pretrain(data, self.root / 'pretrain', epochs=0)
        captions = json.loads((data / 'captions.json').read_text())
        captions['ghost'] = {'duration': 5.0, 'timestamps': [[0, 2]], 'sentences': ['a ghost']}
        sidecar = self.root / 'sidecar.json'
        sidecar.write_text(json.dumps(captions))
        call_command(
            'finetune', '--checkpoint', str(self.root / 'pretrain' / LAST_CHECKPOINT),
            '--features', str(data / 'features'), '--mode', 'weak', '--captions', str(sidecar),
            '--split', '1.0', '--epochs', '1', '--out', str(self.root / 'ft'),
            *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )
        report = read_json_lines(self.root / 'ft' / 'reconciliation.jsonl')
        self.assertEqual([record['video_id'] for record in report], ['ghost'])
        self.assertTrue((self.root / 'ft' / BEST_CHECKPOINT).exists())

    def test_sup_split(self):
        data = self.make_data('summe', 25)
        self.pretrain(data, self.root / 'pretrain', epochs=0)
        call_command(
            'finetune', '--checkpoint', str(self.root / 'pretrain' / LAST_CHECKPOINT),
            '--features', str(data / 'features'), '--mode', 'sup', '--gt', str(data / 'gt'),
            '--split', '0.8', '--epochs', '1', '--out', str(self.root / 'ft'),
            *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )
        split = json.loads((self.root / 'ft' / SPLIT_FILENAME).read_text())
        self.assertEqual((len(split['train']), len(split['held_out'])), (20, 5))

    def test_mismatched_checkpoint(self):
        data = self.make_data('anet', 1)
        self.pretrain(data, self.root / 'pretrain', epochs=0)
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'finetune', '--checkpoint', str(self.root / 'pretrain' / LAST_CHECKPOINT),
                '--features', str(data / 'features'), '--mode', 'sup', '--gt', str(data / 'gt'),
                '--out', str(self.root / 'ft'), *SMALL_MODEL_SETTINGS, '--set', 'summarizer.num_layers=2',
                stdout=io.StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 1)

    def test_invalid_learning_rate(self):
        data = self.make_data('anet', 1)
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'pretrain', '--features', str(data / 'features'), '--captions', str(data / 'captions.json'),
                '--out', str(self.root / 'pretrain'), '--set', 'training.learning_rate=-1', stdout=io.StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('training.learning_rate', str(ctx.exception))


def score_ratio(bundle, videos, inside):
    """Mean score inside the chosen segments over the mean outside every designated segment."""
    inside_scores, outside_scores = [], []
    for video in videos:
        scores = summarize(bundle.summarizer, video.features).scores
        segments = inside(video)
        if not segments:
            continue
        inside_scores.append(scores[video.mask(segments)])
        outside_scores.append(scores[~video.mask()])
    return float(np.concatenate(inside_scores).mean() / np.concatenate(outside_scores).mean())


@pytest.mark.slow
class RegularizerTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus, cls.examples = synthetic_examples(num_videos=1)

    def run_steps(self, weights, steps=500):
        trainer = Trainer(
            small_bundle(self.examples), TrainConfig(learning_rate=1e-3), weights,
        )
        for _ in range(steps):
            trainer.pretrain_step(self.examples[0])
        return summarize(trainer.bundle.summarizer, self.examples[0].features).scores

    def test_length_term_reaches_target(self):
        scores = self.run_steps(LossWeights(beta_cap=0, beta_prior=0, beta_len=1, beta_var=0))
        self.assertAlmostEqual(float(scores.mean()), 0.3, delta=0.02)

    def test_variance_term_spreads_scores(self):
        scores = self.run_steps(LossWeights(beta_cap=0, beta_prior=0, beta_len=0, beta_var=1))
        self.assertGreater(float(scores.var()), 0.2)


@pytest.mark.slow
class OverfitTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus, cls.examples = synthetic_examples(num_videos=8)
        config = TrainConfig(learning_rate=1e-3)
        cls.with_prior = Trainer(small_bundle(cls.examples), config, LossWeights())
        cls.with_prior.pretrain(cls.examples, epochs=200)
        cls.without_prior = Trainer(small_bundle(cls.examples), config, LossWeights(beta_prior=0))
        cls.without_prior.pretrain(cls.examples, epochs=200)

    def test_captioned_segments_score_higher(self):
        ratio = score_ratio(self.with_prior.bundle, self.corpus, lambda video: video.captioned)
        self.assertGreaterEqual(ratio, 1.5)

    def test_prior_raises_uncaptioned_segments(self):
        with_prior = score_ratio(self.with_prior.bundle, self.corpus, lambda video: video.prior_only)
        without_prior = score_ratio(self.without_prior.bundle, self.corpus, lambda video: video.prior_only)
        self.assertLess(without_prior, with_prior)

    def test_supervised_finetune_memorizes(self):
        trainer = Trainer(small_bundle(self.examples), TrainConfig(learning_rate=1e-3), LossWeights())
        trainer.finetune(self.examples, 'sup', epochs=200, split=1.0)
        mse = trainer.mean_loss(self.examples, trainer.supervised_objective)
        self.assertLess(mse, 0.01)
