import io
import json
import tempfile
from pathlib import Path

import numpy as np
import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from .commands import EXIT_RUNTIME, EXIT_USAGE, PipelineCommand
from .configuration import load_run_config, parse_override
from .domain import CaptionEvent, ClipPrior, DenseCaptionAnnotation, FrameFeatures, SummaryScores, validate
from .exceptions import (
    ChecksumError,
    ConfigurationError,
    LengthMismatchError,
    MissingVideoError,
    UnknownVideoError,
    check_same_length,
)
from .factories import (
    ClipPriorFactory,
    DenseCaptionAnnotationFactory,
    FrameFeaturesFactory,
    GroundTruthSummaryFactory,
    RunManifestFactory,
    SummaryScoresFactory,
)
from .manifests import MANIFEST_FILENAME, record_run
from .models import RunManifest
from .text import detokenize, tokenize
from .utils import canonical_json, get_video_file_path, read_json_lines, seed_everything, sha256_file, write_json_lines


def error_code(exc, field_name):
    return exc.error_dict[field_name][0].code


class DomainValidationTests(SimpleTestCase):

    def test_factories_produce_valid_objects(self):
        for factory in (FrameFeaturesFactory, DenseCaptionAnnotationFactory, GroundTruthSummaryFactory):
            validate(factory())

    def test_validate_is_idempotent(self):
        factories = (
            FrameFeaturesFactory, DenseCaptionAnnotationFactory, SummaryScoresFactory,
            ClipPriorFactory, GroundTruthSummaryFactory,
        )
        for factory in factories:
            instance = factory()
            with self.subTest(factory=factory.__name__):
                self.assertIs(validate(validate(instance)), instance)
                self.assertIs(validate(instance), instance)

    def test_frame_count_must_match_duration(self):
        features = FrameFeatures('v', np.ones((10, 4)), fps=2.0, duration_sec=8.0)
        with self.assertRaises(ValidationError) as ctx:
            validate(features)
        self.assertEqual(error_code(ctx.exception, 'features'), 'frame_count')
        validate(FrameFeatures('v', np.ones((10, 4)), fps=2.0, duration_sec=5.4))

    def test_features_must_be_finite(self):
        rows = np.ones((4, 2))
        rows[1, 1] = np.inf
        with self.assertRaises(ValidationError) as ctx:
            validate(FrameFeatures('v', rows, fps=1.0, duration_sec=4.0))
        self.assertEqual(error_code(ctx.exception, 'features'), 'non_finite')

    def test_features_are_read_only(self):
        features = FrameFeaturesFactory()
        with self.assertRaises(ValueError):
            features.features[0, 0] = 1.0

    def test_events_inside_the_video(self):
        annotation = DenseCaptionAnnotation('v', [CaptionEvent(2.0, 11.0, ('late',))], 10.0)
        with self.assertRaises(ValidationError) as ctx:
            validate(annotation)
        self.assertEqual(error_code(ctx.exception, 'events'), 'segment_bounds')
        with self.assertRaises(ValidationError):
            validate(DenseCaptionAnnotation('v', [CaptionEvent(3.0, 3.0, ('empty',))], 10.0))
        with self.assertRaises(ValidationError):
            validate(DenseCaptionAnnotation('v', [CaptionEvent(1.0, 2.0, ())], 10.0))

    def test_normalized_segments(self):
        annotation = DenseCaptionAnnotationFactory()
        self.assertTrue(np.allclose(annotation.normalized_segments(), [[0.1, 0.4], [0.5, 0.9]]))

    def test_scores_range(self):
        with self.assertRaises(ValidationError) as ctx:
            validate(SummaryScores('v', np.array([0.2, 1.2])))
        self.assertEqual(error_code(ctx.exception, 'scores'), 'range')

    def test_prior_is_binary(self):
        with self.assertRaises(ValidationError):
            validate(ClipPrior('v', np.array([0.0, 0.5])))

    def test_shot_tiling(self):
        for boundaries in ([0, 5, 15], [1, 10, 20], [0, 10, 10, 20]):
            with self.assertRaises(ValidationError):
                validate(GroundTruthSummaryFactory(shot_boundaries=boundaries))

    def test_consensus_is_the_annotator_mean(self):
        summary = GroundTruthSummaryFactory(consensus_scores=np.zeros(20))
        with self.assertRaises(ValidationError) as ctx:
            validate(summary)
        self.assertEqual(error_code(ctx.exception, 'consensus_scores'), 'consensus')


class ExceptionTests(SimpleTestCase):

    def test_unknown_video_message(self):
        self.assertEqual(str(UnknownVideoError('no video x')), 'no video x')

    def test_missing_video_lists_ids(self):
        exc = MissingVideoError({'b', 'a'})
        self.assertEqual(exc.missing, ['a', 'b'])
        self.assertIn('a, b', str(exc))

    def test_check_same_length(self):
        check_same_length('a', [1, 2], 'b', [3, 4])
        with self.assertRaisesMessage(LengthMismatchError, 'a has length 2, b has length 3'):
            check_same_length('a', [1, 2], 'b', [3, 4, 5])

    def test_configuration_error_lists_paths(self):
        exc = ConfigurationError({'training.seed': ['bad'], 'loss.beta_len': ['worse']})
        self.assertEqual(str(exc).splitlines()[1:], ['  loss.beta_len: worse', '  training.seed: bad'])


class TextTests(SimpleTestCase):

    def test_tokenize(self):
        self.assertEqual(tokenize('A man, running!  Fast.'), ('a', 'man', 'running', 'fast'))
        self.assertEqual(detokenize(('a', 'man')), 'a man')
        self.assertEqual(tokenize('...'), ())


class UtilsTests(SimpleTestCase):

    def test_seed_everything_is_repeatable(self):
        first = seed_everything(7).permutation(10), torch.rand(3)
        second = seed_everything(7).permutation(10), torch.rand(3)
        self.assertTrue(np.array_equal(first[0], second[0]))
        self.assertTrue(torch.equal(first[1], second[1]))

    def test_canonical_json(self):
        self.assertEqual(canonical_json({'b': 1, 'a': [1, 2]}), '{"a":[1,2],"b":1}')

    def test_video_file_path_is_safe(self):
        path = get_video_file_path('/store', '../etc/passwd', '.vsf')
        self.assertEqual(path.parent, Path('/store'))
        self.assertNotIn('/', path.name)

    def test_json_lines_and_hash(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'records.jsonl'
            write_json_lines(path, [{'b': 2, 'a': 1}, {'c': 3}])
            self.assertEqual(read_json_lines(path), [{'a': 1, 'b': 2}, {'c': 3}])
            self.assertEqual(path.read_text().splitlines()[0], '{"a": 1, "b": 2}')
            self.assertEqual(len(sha256_file(path)), 64)


class ConfigurationTests(SimpleTestCase):

    def test_defaults(self):
        config = load_run_config()
        self.assertEqual(config.encoder.name, 'stub')
        self.assertEqual(config.training.learning_rate, 5e-5)
        self.assertEqual(config.evaluation.budget_fraction, 0.15)
        self.assertEqual(config.loss.beta_prior, 10.0)
        self.assertEqual(config.snapshot, settings.VIDSUM)

    def test_overrides(self):
        config = load_run_config(overrides=['training.epochs=3', 'encoder.weights_path=/models/clip'])
        self.assertEqual(config.training.epochs, 3)
        self.assertEqual(config.encoder.weights_path, '/models/clip')
        self.assertEqual(config.snapshot['training']['epochs'], 3)
        self.assertEqual(settings.VIDSUM['training']['epochs'], 1)

    def test_config_file_then_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text(json.dumps({'training': {'epochs': 4, 'seed': 9}}))
            config = load_run_config(path, ['training.epochs=5'])
        self.assertEqual((config.training.epochs, config.training.seed), (5, 9))

    def test_unknown_key(self):
        with self.assertRaisesMessage(ConfigurationError, 'training.bogus'):
            load_run_config(overrides=['training.bogus=1'])

    def test_section_must_stay_a_mapping(self):
        with self.assertRaisesMessage(ConfigurationError, 'expected a mapping'):
            load_run_config(overrides=['training=1'])

    def test_errors_from_every_section(self):
        with self.assertRaises(ConfigurationError) as ctx:
            load_run_config(overrides=['training.learning_rate=-1', 'summarizer.dropout=2'])
        self.assertEqual(set(ctx.exception.errors), {'training.learning_rate', 'summarizer.dropout'})

    def test_missing_and_broken_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesMessage(ConfigurationError, 'config file not found'):
                load_run_config(Path(tmp) / 'absent.json')
            broken = Path(tmp) / 'broken.json'
            broken.write_text('{')
            with self.assertRaisesMessage(ConfigurationError, 'invalid JSON'):
                load_run_config(broken)

    def test_parse_override(self):
        self.assertEqual(parse_override('a.b=[1, 2]'), {'a': {'b': [1, 2]}})
        self.assertEqual(parse_override('a.b=text'), {'a': {'b': 'text'}})
        with self.assertRaises(ConfigurationError):
            parse_override('a.b')


class RunManifestTests(TestCase):

    def test_record_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = record_run(
                'pretrain', tmp, config={'training': {'seed': 1}}, seed=1,
                label_set_hash='abc', checkpoint_hashes={'last.ckpt': 'f' * 64},
            )
            on_disk = json.loads((Path(tmp) / MANIFEST_FILENAME).read_text())
        stored = RunManifest.objects.get(pk=manifest.pk)
        self.assertEqual(stored.command, 'pretrain')
        self.assertEqual(stored.checkpoint_hashes, {'last.ckpt': 'f' * 64})
        self.assertEqual(on_disk['seed'], 1)
        self.assertEqual(on_disk['config'], {'training': {'seed': 1}})
        self.assertEqual(on_disk['tool_version'], stored.tool_version)
        self.assertIsNotNone(on_disk['created'])

    def test_filter_by_command(self):
        RunManifestFactory.create_batch(2, command='summarize')
        run = RunManifestFactory(command='evaluate')
        self.assertEqual(RunManifest.objects.filter(command='summarize').count(), 2)
        self.assertEqual(str(run), f'evaluate -> {run.output_dir}')
        self.assertEqual(run.as_dict()['command'], 'evaluate')


class FailingCommand(PipelineCommand):

    def __init__(self, error, **kwargs):
        super().__init__(**kwargs)
        self.error = error

    def run(self, options):
        self.load_config(options)
        raise self.error


class PipelineCommandTests(SimpleTestCase):

    def call(self, error, *args):
        with self.assertRaises(CommandError) as ctx:
            call_command(FailingCommand(error, stdout=io.StringIO()), *args)
        return ctx.exception

    def test_input_errors_exit_two(self):
        exc = self.call(UnknownVideoError('unknown video id x'))
        self.assertEqual(exc.returncode, EXIT_USAGE)
        self.assertEqual(str(exc), 'unknown video id x')

    def test_invalid_override_exits_two(self):
        exc = self.call(RuntimeError('unreached'), '--set', 'training.batch_size=0')
        self.assertEqual(exc.returncode, EXIT_USAGE)
        self.assertIn('training.batch_size', str(exc))

    def test_runtime_errors_exit_one(self):
        self.assertEqual(self.call(ChecksumError('bad crc')).returncode, EXIT_RUNTIME)

    def test_other_exceptions_propagate(self):
        with self.assertRaises(RuntimeError):
            call_command(FailingCommand(RuntimeError('bug'), stdout=io.StringIO()))
