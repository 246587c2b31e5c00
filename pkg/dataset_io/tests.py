import io
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from scipy.io import savemat

from clip_prior.prior import PriorConfig, PriorGenerator
from core.domain import ClipPrior
from core.exceptions import AnnotationFormatError, ChecksumError, UnknownVideoError
from core.factories import FrameFeaturesFactory, SummaryScoresFactory
from core.utils import read_json_lines
from encoders.bridge import stub_encoder

from .container import HEADER_BYTES, decode_matrix, encode_matrix
from .forms import DatasetForm
from .ingest import (
    ingest_anet_captions,
    ingest_caption_sidecar,
    ingest_summary_dataset,
    parse_caption_payload,
    stride_boundaries,
    summary_to_record,
    uniform_boundaries,
    write_reconciliation_report,
)
from .store import (
    KIND_FEATURES,
    KIND_PRIOR,
    KIND_SCORES,
    FeatureStore,
    read_features,
    read_prior,
    read_scores,
    write_features,
    write_prior,
    write_scores,
)
from .synthetic import make_synthetic_corpus, write_synthetic_corpus


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)


class ContainerTests(SimpleTestCase):

    def test_round_trip_is_exact(self):
        matrix = np.random.default_rng(0).standard_normal((7, 5)).astype(np.float32)
        self.assertTrue(np.array_equal(decode_matrix(encode_matrix(matrix)), matrix))

    def test_flipped_payload_byte(self):
        blob = bytearray(encode_matrix(np.ones((3, 4))))
        blob[HEADER_BYTES + 2] ^= 0x01
        with self.assertRaisesMessage(ChecksumError, 'checksum'):
            decode_matrix(bytes(blob))

    def test_truncated(self):
        blob = encode_matrix(np.ones((3, 4)))
        with self.assertRaises(ChecksumError):
            decode_matrix(blob[:-8])
        with self.assertRaises(ChecksumError):
            decode_matrix(blob[:10])

    def test_foreign_magic(self):
        blob = b'XXXX' + encode_matrix(np.ones((2, 2)))[4:]
        with self.assertRaisesMessage(ChecksumError, 'magic'):
            decode_matrix(blob)

    def test_only_matrices(self):
        with self.assertRaises(ValueError):
            encode_matrix(np.ones(4))


class FeatureStoreTests(TempDirMixin, SimpleTestCase):

    def test_features_round_trip(self):
        store = FeatureStore(self.root)
        features = FrameFeaturesFactory(video_id='v1', num_frames=12, dim=8)
        write_features(store, features)

        reopened = FeatureStore(self.root)
        self.assertIn('v1', reopened)
        loaded = read_features(reopened, 'v1')
        self.assertTrue(np.array_equal(loaded.features, features.features))
        self.assertEqual((loaded.fps, loaded.duration_sec), (2.0, 6.0))
        self.assertEqual(reopened.index['v1']['kind'], KIND_FEATURES)

    def test_kinds_are_separate(self):
        store = FeatureStore(self.root)
        write_features(store, FrameFeaturesFactory(video_id='a'))
        write_prior(FeatureStore(self.root / 'priors'), ClipPrior('a', np.zeros(10)), label_hash='abc')
        write_scores(store, SummaryScoresFactory(video_id='b'))
        self.assertEqual(store.video_ids(KIND_FEATURES), ['a'])
        self.assertEqual(store.video_ids(KIND_SCORES), ['b'])
        self.assertEqual(FeatureStore(self.root / 'priors').video_ids(KIND_PRIOR), ['a'])
        self.assertEqual(FeatureStore(self.root / 'priors').index['a']['label_hash'], 'abc')
        with self.assertRaises(UnknownVideoError):
            read_scores(store, 'a')

    def test_prior_and_scores_round_trip(self):
        store = FeatureStore(self.root)
        prior = ClipPrior('p', np.array([0, 1, 1, 0], dtype=np.float32))
        write_prior(store, prior)
        self.assertTrue(np.array_equal(read_prior(store, 'p').prior, prior.prior))
        scores = SummaryScoresFactory(video_id='s')
        write_scores(store, scores)
        self.assertTrue(np.array_equal(read_scores(store, 's').scores, scores.scores))

    def test_unknown_video(self):
        with self.assertRaisesMessage(UnknownVideoError, 'ghost'):
            read_features(FeatureStore(self.root), 'ghost')

    def test_corrupt_container(self):
        store = FeatureStore(self.root)
        write_features(store, FrameFeaturesFactory(video_id='v1'))
        path = self.root / store.index['v1']['file']
        blob = bytearray(path.read_bytes())
        blob[-6] ^= 0xFF
        path.write_bytes(bytes(blob))
        with self.assertRaises(ChecksumError):
            read_features(FeatureStore(self.root), 'v1')

    def test_colliding_file_names(self):
        store = FeatureStore(self.root)
        write_features(store, FrameFeaturesFactory(video_id='a b'))
        write_features(store, FrameFeaturesFactory(video_id='a_b'))
        self.assertNotEqual(store.index['a b']['file'], store.index['a_b']['file'])
        self.assertEqual(read_features(store, 'a_b').video_id, 'a_b')


class CaptionIngestTests(TempDirMixin, SimpleTestCase):

    def test_parse_clamps_and_drops(self):
        result = parse_caption_payload({
            'v2': {'duration': 10.0, 'timestamps': [[-1, 4], [6, 12], [7, 7]],
                   'sentences': ['A man runs.', 'He jumps!', 'nothing']},
            'v1': {'duration': 5.0, 'timestamps': [[3, 2]], 'sentences': ['backwards']},
        })
        self.assertEqual(result.dropped_events, 2)
        self.assertEqual(result.skipped_videos, ['v1'])
        [annotation] = result.annotations
        self.assertEqual(annotation.video_id, 'v2')
        self.assertEqual(
            [(event.start_sec, event.end_sec) for event in annotation.events], [(0.0, 4.0), (6.0, 10.0)]
        )
        self.assertEqual(annotation.events[0].sentence, ('a', 'man', 'runs'))

    def test_count_mismatch(self):
        with self.assertRaisesMessage(AnnotationFormatError, '2 timestamps'):
            parse_caption_payload({'v': {'duration': 5.0, 'timestamps': [[0, 1], [1, 2]], 'sentences': ['x']}})

    def test_missing_field(self):
        with self.assertRaises(AnnotationFormatError):
            parse_caption_payload({'v': {'timestamps': [], 'sentences': []}})

    def test_video_without_events(self):
        with self.assertRaises(ValidationError) as ctx:
            parse_caption_payload({'v': {'duration': 5.0, 'timestamps': [], 'sentences': []}})
        self.assertIn('events', ctx.exception.error_dict)

    def test_malformed_event(self):
        with self.assertRaisesMessage(AnnotationFormatError, "video 'v' event 1 is malformed"):
            parse_caption_payload({'v': {'duration': 5.0, 'timestamps': [[0, 1], [1]], 'sentences': ['a', 'b']}})
        with self.assertRaisesMessage(AnnotationFormatError, 'event 0 is malformed'):
            parse_caption_payload({'v': {'duration': 5.0, 'timestamps': [[0, 1]], 'sentences': [None]}})
        with self.assertRaisesMessage(AnnotationFormatError, 'event 0 is malformed'):
            parse_caption_payload({'v': {'duration': 5.0, 'timestamps': [[0, 'late']], 'sentences': ['a']}})

    def test_malformed_file(self):
        path = self.root / 'captions.json'
        path.write_text('{"v": ')
        with self.assertRaisesMessage(AnnotationFormatError, 'malformed JSON'):
            ingest_anet_captions(path)

    def test_sidecar_reconciliation(self):
        path = self.root / 'sidecar.json'
        path.write_text(json.dumps({
            video_id: {'duration': 4.0, 'timestamps': [[0, 2]], 'sentences': ['a dog']}
            for video_id in ('known', 'orphan_b', 'orphan_a')
        }))
        result = ingest_caption_sidecar(path, ['known', 'featureless'])
        self.assertEqual([a.video_id for a in result.annotations], ['known'])
        self.assertEqual(result.orphans, ['orphan_a', 'orphan_b'])

        report = self.root / 'out' / 'reconciliation.jsonl'
        write_reconciliation_report(report, result.orphans, path)
        records = read_json_lines(report)
        self.assertEqual([record['video_id'] for record in records], ['orphan_a', 'orphan_b'])
        self.assertEqual(records[0]['status'], 'orphan')


class SummaryIngestTests(TempDirMixin, SimpleTestCase):

    def write_record(self, name, record):
        (self.root / name).write_text(json.dumps(record))

    def test_json_records(self):
        self.write_record('a.json', {'video_id': 'a', 'user_scores': [[1, 1, 5, 5], [1, 2, 4, 5]],
                                     'shot_boundaries': [0, 2, 4]})
        self.write_record('b.json', {'user_scores': [[1] * 6], 'change_points': [[0, 2], [3, 5]]})
        self.write_record('c.json', {'user_scores': [[1] * 7]})
        self.write_record('manifest.json', {'command': 'evaluate'})
        a, b, c = ingest_summary_dataset(self.root, 'tvsum', shot_len=3)
        self.assertEqual(a.shot_boundaries, (0, 2, 4))
        self.assertEqual(a.num_annotators, 2)
        self.assertEqual((b.video_id, b.shot_boundaries), ('b', (0, 3, 6)))
        self.assertTrue(c.synthetic_shots)
        self.assertEqual(c.shot_boundaries, (0, 3, 6, 7))

    def test_record_round_trip(self):
        self.write_record('a.json', {'video_id': 'a', 'user_scores': [[1, 3, 5]], 'shot_boundaries': [0, 1, 3]})
        [summary] = ingest_summary_dataset(self.root, 'summe', shot_len=2)
        self.assertEqual(summary_to_record(summary)['shot_boundaries'], [0, 1, 3])
        self.assertEqual(summary_to_record(summary)['n_frames'], 3)

    def test_frame_stride(self):
        self.write_record('a.json', {'user_scores': [list(range(1, 9))]})
        [summary] = ingest_summary_dataset(self.root, 'tvsum', shot_len=2, frame_stride=2)
        self.assertEqual(summary.annotator_scores.tolist(), [[1, 3, 5, 7]])

    def test_frame_stride_maps_change_points(self):
        self.write_record('a.json', {'user_scores': [[1] * 200], 'change_points': [[0, 99], [100, 199]]})
        [summary] = ingest_summary_dataset(self.root, 'tvsum', frame_stride=15)
        self.assertEqual(summary.num_frames, 14)
        self.assertEqual(summary.shot_boundaries, (0, 7, 14))
        self.assertFalse(summary.synthetic_shots)

    def test_frame_stride_maps_shot_files(self):
        (self.root / 'anno.tsv').write_text('v1\tcat\t1,2,3,4,5,1\n')
        (self.root / 'shots.json').write_text(json.dumps({'v1': [[0, 2], [3, 5]]}))
        [v1] = ingest_summary_dataset(self.root, 'tvsum', frame_stride=2)
        self.assertEqual(v1.annotator_scores.tolist(), [[1, 3, 5]])
        self.assertEqual(v1.shot_boundaries, (0, 2, 3))

        (self.root / 'anno.tsv').unlink()
        user_score = np.ones((100, 15))
        savemat(self.root / 'Jumps.mat', {'user_score': user_score, 'shot_boundaries': [0, 30, 60, 100]})
        [jumps] = ingest_summary_dataset(self.root, 'summe', frame_stride=4)
        self.assertEqual(jumps.shot_boundaries, (0, 8, 15, 25))

    def test_stride_boundaries_merges_collapsed_shots(self):
        self.assertEqual(stride_boundaries([0, 1, 2, 10], 5, 2), [0, 1, 2])
        self.assertEqual(stride_boundaries([0, 3, 6], 1, 6), [0, 3, 6])

    def test_inconsistent_records(self):
        self.write_record('a.json', {'user_scores': [[1, 2, 3], [1, 2]]})
        with self.assertRaisesMessage(AnnotationFormatError, 'lengths differ'):
            ingest_summary_dataset(self.root, 'tvsum')

    def test_declared_length_mismatch(self):
        self.write_record('a.json', {'user_scores': [[1, 2, 3]], 'n_frames': 4})
        with self.assertRaisesMessage(AnnotationFormatError, 'declares 4'):
            ingest_summary_dataset(self.root, 'tvsum')

    def test_tvsum_tsv(self):
        (self.root / 'anno.tsv').write_text(
            'v1\tcat\t1,2,3,4,5,1\n'
            'v1\tcat\t2,2,3,3,5,1\n'
            'v2\tdog\t1,1,1\n'
        )
        (self.root / 'shots.json').write_text(json.dumps({'v1': [[0, 2], [3, 5]]}))
        v1, v2 = ingest_summary_dataset(self.root, 'tvsum', shot_len=2)
        self.assertEqual(v1.num_annotators, 2)
        self.assertEqual(v1.shot_boundaries, (0, 3, 6))
        self.assertFalse(v1.synthetic_shots)
        self.assertTrue(v2.synthetic_shots)

    def test_summe_mat(self):
        user_score = np.random.default_rng(0).integers(0, 2, size=(100, 15))
        savemat(self.root / 'Jumps.mat', {'user_score': user_score})
        [summary] = ingest_summary_dataset(self.root, 'summe', shot_len=10)
        self.assertEqual(summary.video_id, 'Jumps')
        self.assertEqual((summary.num_annotators, summary.num_frames), (15, 100))
        self.assertEqual(len(summary.shot_boundaries), 11)
        self.assertTrue(summary.synthetic_shots)

    def test_layout_and_directory(self):
        with self.assertRaises(AnnotationFormatError):
            ingest_summary_dataset(self.root, 'youtube')
        with self.assertRaises(AnnotationFormatError):
            ingest_summary_dataset(self.root / 'absent', 'tvsum')

    def test_uniform_boundaries(self):
        self.assertEqual(uniform_boundaries(10, 4), [0, 4, 8, 10])
        self.assertEqual(uniform_boundaries(8, 4), [0, 4, 8])


class SyntheticCorpusTests(TempDirMixin, SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.handle = stub_encoder(embed_dim=64)
        cls.prior_config = PriorConfig()
        cls.corpus = make_synthetic_corpus(cls.handle, cls.prior_config.labels, num_videos=4)

    def test_layout(self):
        self.assertEqual(len(self.corpus), 4)
        first, second = self.corpus.videos[:2]
        self.assertEqual(first.captioned, ((3, 17),))
        self.assertEqual(first.prior_only, ())
        self.assertEqual(second.captioned, ((23, 37),))
        self.assertEqual(second.prior_only, ((3, 17),))
        self.assertEqual(second.features.features.shape, (40, 64))
        [event] = first.annotation.events
        self.assertEqual((event.start_sec, event.end_sec), (1.5, 8.5))

    def test_ground_truth_marks_designated_frames(self):
        for video in self.corpus:
            consensus = video.summary.consensus_scores
            self.assertTrue(np.allclose(consensus[video.mask()], 5.0))
            self.assertTrue(np.allclose(consensus[~video.mask()], 1.0))

    def test_prior_fires_on_designated_segments(self):
        generator = PriorGenerator(self.handle, self.prior_config)
        for video in self.corpus:
            prior = generator.generate(video.features).prior
            self.assertTrue((prior[video.mask()] == 1).all(), video.video_id)
            self.assertLess(prior[~video.mask()].mean(), 0.1)

    def test_too_few_frames(self):
        with self.assertRaises(ValueError):
            make_synthetic_corpus(self.handle, self.prior_config.labels, num_frames=20)

    def test_written_corpus_reads_back(self):
        paths = write_synthetic_corpus(self.corpus, self.root)
        store = FeatureStore(paths['features'])
        self.assertEqual(store.video_ids(KIND_FEATURES), [video.video_id for video in self.corpus])
        captions = ingest_anet_captions(paths['captions'])
        self.assertEqual(len(captions.annotations), 4)
        self.assertEqual(captions.annotations[0].events, self.corpus.videos[0].annotation.events)
        summaries = ingest_summary_dataset(paths['gt'], 'tvsum')
        self.assertEqual(summaries[1].shot_boundaries, self.corpus.videos[1].summary.shot_boundaries)
        segments = json.loads(paths['segments'].read_text())
        self.assertEqual(segments['synthetic_001']['prior_only'], [[3, 17]])


class DatasetFormTests(SimpleTestCase):

    def test_shot_length(self):
        form = DatasetForm(data={'fps': 2.0, 'fallback_shot_seconds': 2.0, 'frame_stride': 1})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.to_config().fallback_shot_len, 4)

    def test_invalid(self):
        form = DatasetForm(data={'fps': 0, 'fallback_shot_seconds': 2.0, 'frame_stride': 0})
        self.assertEqual(set(form.errors), {'fps', 'frame_stride'})


class MakeSyntheticDataCommandTests(TempDirMixin, TestCase):

    def test_writes_corpus_and_manifest(self):
        out = self.root / 'synthetic'
        stdout = io.StringIO()
        call_command(
            'make_synthetic_data', '--out', str(out), '--videos', '3', '--set', 'encoder.embed_dim=64',
            stdout=stdout,
        )
        self.assertEqual(len(FeatureStore(out / 'features')), 3)
        self.assertEqual(len(list((out / 'gt').glob('*.json'))), 3)
        manifest = json.loads((out / 'manifest.json').read_text())
        self.assertEqual(manifest['command'], 'make_synthetic_data')
        self.assertEqual(manifest['label_set_hash'], PriorConfig().label_hash)
        self.assertIn('Wrote 3 synthetic videos', stdout.getvalue())

    def test_too_few_frames(self):
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'make_synthetic_data', '--out', str(self.root), '--frames', '10', stdout=io.StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('--frames', str(ctx.exception))
