import io
import json
import tempfile
from pathlib import Path

import numpy as np
import torch
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from core.exceptions import LengthMismatchError, SequenceTooLongError
from core.factories import FrameFeaturesFactory, SummaryScoresFactory
from core.utils import seed_everything
from dataset_io.store import KIND_SCORES, FeatureStore, read_scores

from .forms import SummarizerConfigForm
from .model import FrameSummarizer, SummarizerConfig, sinusoidal_encoding, summarize, weight_features

SMALL = SummarizerConfig(embed_dim=32, num_layers=2, num_heads=4, mlp_ratio=2.0, dropout=0.0, max_frames=64)


def small_model(input_dim=16, seed=0):
    seed_everything(seed)
    return FrameSummarizer(SMALL, input_dim)


class SummarizeTests(SimpleTestCase):

    def test_scores_in_open_unit_interval(self):
        seed_everything(0)
        model = FrameSummarizer(SummarizerConfig(), 512)
        features = FrameFeaturesFactory(num_frames=10, dim=512)
        scores = summarize(model, features)
        self.assertEqual(len(scores), 10)
        self.assertTrue(((scores.scores > 0) & (scores.scores < 1)).all())

    def test_eval_mode_is_deterministic(self):
        model = small_model()
        features = FrameFeaturesFactory(num_frames=12)
        first = summarize(model, features).scores
        second = summarize(model, features).scores
        self.assertTrue(np.array_equal(first, second))

    def test_summarize_restores_training_mode(self):
        model = small_model()
        model.train()
        summarize(model, FrameFeaturesFactory())
        self.assertTrue(model.training)

    def test_too_many_frames(self):
        model = small_model()
        with self.assertRaisesMessage(SequenceTooLongError, 'chunk'):
            summarize(model, FrameFeaturesFactory(num_frames=65))

    def test_gradients_reach_input_features(self):
        model = small_model()
        features = FrameFeaturesFactory(num_frames=6).as_tensor().requires_grad_()
        model(features).sum().backward()
        self.assertIsNotNone(features.grad)
        self.assertGreater(features.grad.abs().sum().item(), 0)

    def test_frame_order_matters_after_training(self):
        model = small_model()
        features = FrameFeaturesFactory(num_frames=16)
        inputs = features.as_tensor()
        target = torch.linspace(0.1, 0.9, 16)
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        for _ in range(50):
            optimizer.zero_grad()
            torch.mean((model(inputs) - target) ** 2).backward()
            optimizer.step()
        model.eval()
        permutation = torch.randperm(16, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            permuted = model(inputs[permutation])
            reference = model(inputs)[permutation]
        self.assertGreater((permuted - reference).abs().max().item(), 1e-4)


class SinusoidalEncodingTests(SimpleTestCase):

    def test_first_position(self):
        encoding = sinusoidal_encoding(4, 6)
        self.assertTrue(torch.equal(encoding[0, 0::2], torch.zeros(3)))
        self.assertTrue(torch.equal(encoding[0, 1::2], torch.ones(3)))

    def test_odd_width(self):
        self.assertEqual(sinusoidal_encoding(3, 5).shape, (3, 5))


class WeightFeaturesTests(SimpleTestCase):

    def setUp(self):
        self.features = FrameFeaturesFactory(num_frames=5, dim=4).as_tensor(torch.float64)

    def test_ones_is_identity(self):
        weighted = weight_features(self.features, torch.ones(5, dtype=torch.float64))
        self.assertTrue(torch.equal(weighted, self.features))

    def test_zeros_annihilate(self):
        weighted = weight_features(self.features, torch.zeros(5, dtype=torch.float64))
        self.assertTrue(torch.equal(weighted, torch.zeros_like(self.features)))

    def test_scalar_scaling(self):
        weighted = weight_features(torch.tensor([[2.0, 4.0]]), torch.tensor([0.5]))
        self.assertTrue(torch.equal(weighted, torch.tensor([[1.0, 2.0]])))

    def test_domain_objects(self):
        features = FrameFeaturesFactory(num_frames=5, dim=4)
        scores = SummaryScoresFactory(num_frames=5)
        weighted = weight_features(features, scores)
        expected = features.features * scores.scores[:, None]
        np.testing.assert_allclose(weighted.numpy(), expected, rtol=0, atol=0)

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatchError):
            weight_features(self.features, torch.ones(4, dtype=torch.float64))

    def test_linear_in_scores(self):
        generator = torch.Generator().manual_seed(0)
        s1 = torch.rand(5, generator=generator, dtype=torch.float64)
        s2 = torch.rand(5, generator=generator, dtype=torch.float64)
        a, b = 0.7, -1.3
        combined = weight_features(self.features, a * s1 + b * s2)
        separate = a * weight_features(self.features, s1) + b * weight_features(self.features, s2)
        self.assertLess((combined - separate).abs().max().item(), 1e-6)

    def test_gradcheck(self):
        generator = torch.Generator().manual_seed(0)
        for _ in range(20):
            features = torch.randn(5, 3, generator=generator, dtype=torch.float64, requires_grad=True)
            scores = torch.rand(5, generator=generator, dtype=torch.float64, requires_grad=True)
            self.assertTrue(torch.autograd.gradcheck(
                lambda f, s: weight_features(f, s).pow(2).sum(), (features, scores),
                eps=1e-5, atol=1e-8, rtol=1e-4,
            ))


class SummarizerConfigFormTests(SimpleTestCase):

    def _data(self, **overrides):
        data = {'embed_dim': 256, 'num_layers': 4, 'num_heads': 4, 'mlp_ratio': 4.0,
                'dropout': 0.1, 'max_frames': 2048}
        data.update(overrides)
        return data

    def test_defaults_valid(self):
        form = SummarizerConfigForm(data=self._data())
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.to_config(), SummarizerConfig())

    def test_heads_must_divide_width(self):
        form = SummarizerConfigForm(data=self._data(embed_dim=30))
        self.assertFalse(form.is_valid())
        self.assertIn('embed_dim', form.errors)

    def test_dropout_range(self):
        form = SummarizerConfigForm(data=self._data(dropout=1.0))
        self.assertFalse(form.is_valid())
        self.assertIn('dropout', form.errors)


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


class SummarizeCommandTests(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.data = self.root / 'data'
        call_command(
            'make_synthetic_data', '--out', str(self.data), '--videos', '2', '--frames', '100',
            *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )
        call_command(
            'pretrain', '--features', str(self.data / 'features'), '--captions', str(self.data / 'captions.json'),
            '--epochs', '0', '--out', str(self.root / 'model'), *SMALL_MODEL_SETTINGS, stdout=io.StringIO(),
        )
        self.checkpoint = self.root / 'model' / 'last.ckpt'

    def summarize(self, *args):
        out = self.root / 'summary'
        call_command(
            'summarize', '--checkpoint', str(self.checkpoint), '--features', str(self.data / 'features'),
            '--out', str(out), *SMALL_MODEL_SETTINGS, *args, stdout=io.StringIO(),
        )
        return out

    def test_scores_and_keyshots(self):
        out = self.summarize('--gt', str(self.data / 'gt'), '--budget', '0.15')
        store = FeatureStore(out)
        self.assertEqual(store.video_ids(KIND_SCORES), ['synthetic_000', 'synthetic_001'])
        scores = read_scores(store, 'synthetic_000')
        self.assertEqual(len(scores), 100)
        self.assertTrue(((scores.scores >= 0) & (scores.scores <= 1)).all())

        keyshots = json.loads((out / 'keyshots.json').read_text())
        self.assertEqual(set(keyshots), {'synthetic_000', 'synthetic_001'})
        for entry in keyshots.values():
            self.assertEqual(entry['budget_frames'], 15)
            self.assertLessEqual(entry['selected_frames'], 15)
            self.assertFalse(entry['synthetic_shots'])
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['command'], 'summarize')
        self.assertIn('last.ckpt', manifest['checkpoint_hashes'])

    def test_uniform_shots_without_ground_truth(self):
        out = self.summarize()
        keyshots = json.loads((out / 'keyshots.json').read_text())
        self.assertTrue(all(entry['synthetic_shots'] for entry in keyshots.values()))

    def test_captions(self):
        out = self.summarize('--captions')
        captions = json.loads((out / 'captions.json').read_text())
        self.assertEqual(set(captions), {'synthetic_000', 'synthetic_001'})
        for entries in captions.values():
            for entry in entries:
                start, end = entry['segment']
                self.assertLess(start, end)
                self.assertGreater(entry['confidence'], 0.5)

    def test_checkpoint_from_another_configuration(self):
        with self.assertRaises(CommandError) as ctx:
            self.summarize('--set', 'summarizer.embed_dim=64')
        self.assertEqual(ctx.exception.returncode, 1)
