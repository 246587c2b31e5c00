import io
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.cache import caches
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from core.exceptions import EncoderError
from core.factories import FrameFeaturesFactory
from dataset_io.store import KIND_PRIOR, FeatureStore, read_prior, write_features
from encoders.bridge import encode_texts, stub_encoder

from .forms import PriorConfigForm
from .prior import PriorConfig, PriorGenerator, build_similarity, extract_prior, label_runs, load_labels

LABELS = ('cat', 'dog')


def config(**overrides):
    return PriorConfig(labels=overrides.pop('labels', LABELS), **overrides)


def single_run(num_frames, start, end, num_labels=2, column=0):
    similarity = np.full((num_frames, num_labels), 0.2)
    similarity[start:end, column] = 0.9
    return similarity


def oracle_prior(similarity, tau, min_run, max_fraction):
    num_frames, num_labels = similarity.shape
    prior = [0.0] * num_frames
    for k in range(num_labels):
        t = 0
        while t < num_frames:
            if similarity[t, k] > tau:
                start = t
                while t < num_frames and similarity[t, k] > tau:
                    t += 1
                if min_run < t - start < max_fraction * num_frames:
                    for i in range(start, t):
                        prior[i] = 1.0
            else:
                t += 1
    return np.array(prior, dtype=np.float32)


class BuildSimilarityTests(SimpleTestCase):

    def test_saturates_on_identical_embedding(self):
        texts = np.eye(2, 4)
        similarity = build_similarity(texts[:1], texts, 100.0)
        np.testing.assert_allclose(similarity[0], [1.0, 0.0], atol=1e-12)

    def test_equidistant_frame(self):
        texts = np.eye(2, 3)
        similarity = build_similarity(np.array([[1.0, 1.0, 0.0]]), texts, 100.0)
        np.testing.assert_allclose(similarity[0], [0.5, 0.5])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        similarity = build_similarity(rng.normal(size=(50, 16)), rng.normal(size=(100, 16)), 100.0)
        self.assertEqual(similarity.shape, (50, 100))
        np.testing.assert_allclose(similarity.sum(axis=1), 1.0, atol=1e-5)

    def test_inputs_are_normalized_internally(self):
        texts = np.eye(2, 3)
        frames = np.array([[5.0, 0.0, 0.0]])
        np.testing.assert_allclose(build_similarity(frames, texts, 1.0), build_similarity(frames / 5, texts, 1.0))

    def test_zero_norm_row(self):
        with self.assertRaises(EncoderError):
            build_similarity(np.zeros((1, 3)), np.eye(2, 3), 100.0)


class ExtractPriorTests(SimpleTestCase):

    def test_qualifying_run(self):
        prior = extract_prior(single_run(40, 5, 20), config())
        expected = np.zeros(40, dtype=np.float32)
        expected[5:20] = 1
        self.assertTrue(np.array_equal(prior.prior, expected))

    def test_short_run_excluded(self):
        self.assertEqual(extract_prior(single_run(40, 5, 13), config()).prior.sum(), 0)

    def test_long_run_excluded(self):
        self.assertEqual(extract_prior(single_run(20, 2, 17), config()).prior.sum(), 0)

    def test_boundaries_are_strict(self):
        self.assertEqual(extract_prior(single_run(40, 0, 10), config()).prior.sum(), 0)
        self.assertEqual(extract_prior(single_run(40, 0, 11), config()).prior.sum(), 11)
        self.assertEqual(extract_prior(single_run(30, 0, 15), config()).prior.sum(), 0)

    def test_runs_of_different_labels_are_merged(self):
        similarity = np.full((60, 2), 0.2)
        similarity[5:20, 0] = 0.9
        similarity[12:26, 1] = 0.9
        prior = extract_prior(similarity, config())
        self.assertTrue(np.array_equal(np.flatnonzero(prior.prior), np.arange(5, 26)))

    def test_output_is_binary(self):
        prior = extract_prior(np.random.default_rng(1).dirichlet(np.ones(3), size=30), config())
        self.assertTrue(np.isin(prior.prior, (0.0, 1.0)).all())

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            num_frames = int(rng.integers(1, 51))
            num_labels = int(rng.integers(1, 11))
            similarity = rng.dirichlet(np.full(num_labels, 0.3), size=num_frames)
            min_run = int(rng.integers(1, 6))
            tau = float(rng.uniform(0.05, 0.6))
            cfg = config(labels=tuple(f'l{i}' for i in range(num_labels)), tau=tau, min_run_frames=min_run)
            expected = oracle_prior(similarity, tau, min_run, cfg.max_run_fraction)
            self.assertTrue(np.array_equal(extract_prior(similarity, cfg).prior, expected))

    def test_threshold_mask_is_monotone_in_tau(self):
        rng = np.random.default_rng(3)
        column = rng.uniform(size=200)
        for low, high in [(0.1, 0.2), (0.3, 0.9), (0.4, 0.41)]:
            self.assertTrue(np.all((column > high) <= (column > low)))

    def test_label_runs(self):
        self.assertEqual(label_runs([0, 1, 1, 0, 1]), [(1, 3), (4, 5)])
        self.assertEqual(label_runs([]), [])


class PriorGeneratorTests(SimpleTestCase):

    def setUp(self):
        caches['priors'].clear()
        self.handle = stub_encoder(embed_dim=32, seed=0)
        self.config = config(labels=('cat', 'dog', 'car', 'tree'))

    def _aligned_video(self):
        rng = np.random.default_rng(5)
        dog = encode_texts(self.handle, ['An image of dog.'])[0]
        rows = rng.normal(size=(40, 32)) * 0.05
        rows[10:24] += dog
        rows += rng.normal(size=(40, 32)) * 0.01
        return FrameFeaturesFactory(features=rows.astype(np.float32), num_frames=40, dim=32)

    def test_aligned_segment_fires(self):
        prior = PriorGenerator(self.handle, self.config).generate(self._aligned_video())
        self.assertTrue(np.array_equal(np.flatnonzero(prior.prior), np.arange(10, 24)))

    def test_cached_result_is_reused(self):
        generator = PriorGenerator(self.handle, self.config)
        video = self._aligned_video()
        first = generator.generate(video)
        with self.assertLogs('clip_prior.prior', level='DEBUG') as logs:
            second = generator.generate(video)
        self.assertTrue(any('cache hit' in line for line in logs.output))
        self.assertTrue(np.array_equal(first.prior, second.prior))

    def test_dimension_mismatch(self):
        generator = PriorGenerator(self.handle, self.config)
        with self.assertRaises(EncoderError):
            generator.generate(FrameFeaturesFactory(dim=16))

    def test_prompts_and_hash(self):
        self.assertEqual(self.config.prompts()[1], 'An image of dog.')
        self.assertEqual(self.config.label_hash, config(labels=('cat', 'dog', 'car', 'tree')).label_hash)
        self.assertNotEqual(self.config.label_hash, config().label_hash)

    def test_shipped_labels(self):
        labels = load_labels()
        self.assertEqual(len(labels), 100)
        self.assertEqual(len(set(labels)), 100)


class PriorConfigFormTests(SimpleTestCase):

    def test_valid_defaults(self):
        form = PriorConfigForm(data={
            'prompt_template': 'An image of [object].', 'tau': 0.4,
            'min_run_frames': 10, 'max_run_fraction': 0.5,
        })
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(len(form.to_config().labels), 100)

    def test_invalid_values(self):
        form = PriorConfigForm(data={
            'prompt_template': 'An image.', 'tau': 1.0, 'min_run_frames': 0, 'max_run_fraction': 0,
        })
        self.assertFalse(form.is_valid())
        self.assertEqual(
            set(form.errors), {'prompt_template', 'tau', 'min_run_frames', 'max_run_fraction'}
        )


class GenPriorCommandTests(TestCase):

    def setUp(self):
        caches['priors'].clear()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        store = FeatureStore(self.root / 'features')
        for _ in range(3):
            write_features(store, FrameFeaturesFactory(num_frames=30, dim=512))

    def _call(self, *args):
        call_command(
            'gen_prior', '--features', str(self.root / 'features'), '--out', str(self.root / 'priors'),
            '--set', 'encoder.name="stub"', *args, stdout=io.StringIO(),
        )

    def test_writes_one_prior_per_video_and_manifest(self):
        self._call()
        store = FeatureStore(self.root / 'priors')
        self.assertEqual(len(store.video_ids(KIND_PRIOR)), 3)
        manifest = json.loads((self.root / 'priors' / 'manifest.json').read_text())
        self.assertEqual(manifest['label_set_hash'], PriorConfig().label_hash)
        self.assertEqual(manifest['config']['prior']['tau'], 0.4)

    def test_high_tau_gives_empty_priors(self):
        self._call('--tau', '0.99')
        store = FeatureStore(self.root / 'priors')
        for video_id in store.video_ids(KIND_PRIOR):
            self.assertEqual(read_prior(store, video_id).prior.sum(), 0)

    def test_missing_labels_file(self):
        with self.assertRaises(CommandError) as ctx:
            self._call('--labels', str(self.root / 'nope.txt'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_invalid_override(self):
        with self.assertRaises(CommandError) as ctx:
            self._call('--set', 'prior.tau=2')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('prior.tau', str(ctx.exception))
