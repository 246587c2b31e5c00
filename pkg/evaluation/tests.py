import io
import itertools
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from core.domain import GroundTruthSummary, SummaryScores
from core.exceptions import LengthMismatchError, MissingVideoError
from core.utils import write_json
from dataset_io.ingest import summary_to_record
from dataset_io.store import FeatureStore, write_scores

from .forms import EvaluationForm
from .management.commands.evaluate import REPORT_DIRNAME, REPORT_FILENAME
from .selection import (
    Shot,
    binarize,
    evaluate_dataset,
    f1_score,
    knapsack_select,
    segment_shots,
    summary_budget,
)

BOUNDARIES = [0, 2, 5, 10]
FIRST_TWO = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
LAST = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
MIDDLE = [0, 0, 1, 1, 1, 0, 0, 0, 0, 0]
FIRST = [1, 1, 0, 0, 0, 0, 0, 0, 0, 0]


def gt(video_id, annotators, boundaries=BOUNDARIES):
    return GroundTruthSummary.from_annotators(video_id, annotators, boundaries)


def brute_force(shots, budget):
    best_value, best_sets = -1.0, []
    for size in range(len(shots) + 1):
        for subset in itertools.combinations(range(len(shots)), size):
            if sum(shots[i].length for i in subset) > budget:
                continue
            if any(shots[i].value <= 0 for i in subset):
                continue
            value = sum(shots[i].value for i in subset)
            if value > best_value + 1e-9:
                best_value, best_sets = value, [subset]
            elif abs(value - best_value) <= 1e-9:
                best_sets.append(subset)
    return best_value, min(best_sets)


class SegmentShotsTests(SimpleTestCase):

    def test_two_shots(self):
        shots = segment_shots([0, 5, 10], np.ones(10))
        self.assertEqual(shots, [Shot(0, 5, 1.0), Shot(5, 10, 1.0)])

    def test_single_shot(self):
        self.assertEqual(len(segment_shots([0, 7], np.zeros(7))), 1)

    def test_means(self):
        shots = segment_shots([0, 2, 4], [1, 1, 0, 0])
        self.assertEqual([shot.mean_score for shot in shots], [1.0, 0.0])

    def test_accepts_ground_truth(self):
        summary = gt('v', [FIRST_TWO])
        self.assertEqual(len(segment_shots(summary, SummaryScores('v', np.ones(10)))), 3)

    def test_boundaries_must_tile(self):
        with self.assertRaises(ValidationError):
            segment_shots([0, 5, 9], np.ones(10))
        with self.assertRaises(ValidationError):
            segment_shots([0, 5, 5, 10], np.ones(10))


class KnapsackSelectTests(SimpleTestCase):

    def test_dominant_item(self):
        shots = [Shot(0, 5, 1.0), Shot(5, 10, 0.1)]
        self.assertEqual(knapsack_select(shots, 5).tolist(), [True, False])

    def test_unconstrained_budget_takes_positive_shots(self):
        shots = [Shot(0, 3, 0.5), Shot(3, 5, 0.0), Shot(5, 9, 0.2)]
        self.assertEqual(knapsack_select(shots, 100).tolist(), [True, False, True])

    def test_zero_budget(self):
        self.assertFalse(knapsack_select([Shot(0, 3, 0.5)], 0).any())

    def test_tie_prefers_lexicographically_smallest(self):
        shots = [Shot(0, 2, 0.5), Shot(2, 4, 0.5), Shot(4, 6, 0.5)]
        self.assertEqual(knapsack_select(shots, 4).tolist(), [True, True, False])
        shots = [Shot(0, 4, 0.5), Shot(4, 6, 1.0), Shot(6, 8, 0.5)]
        self.assertEqual(knapsack_select(shots, 4).tolist(), [False, True, True])

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            count = int(rng.integers(1, 13))
            lengths = rng.integers(1, 15, size=count)
            boundaries = np.concatenate([[0], np.cumsum(lengths)])
            shots = [Shot(int(s), int(e), float(v)) for s, e, v in zip(boundaries, boundaries[1:], rng.uniform(size=count))]
            budget = int(0.4 * boundaries[-1])
            selection = knapsack_select(shots, budget)
            best_value, best_set = brute_force(shots, budget)
            chosen = tuple(np.flatnonzero(selection).tolist())
            self.assertEqual(chosen, best_set)
            self.assertLessEqual(sum(shots[i].length for i in chosen), budget)

    def test_eighteen_shots(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            lengths = rng.integers(1, 10, size=18)
            values = rng.uniform(size=18)
            masks = ((np.arange(2 ** 18)[:, None] >> np.arange(18)) & 1).astype(np.uint8)
            budget = int(0.4 * lengths.sum())
            feasible = masks @ lengths <= budget
            totals = np.where(feasible, masks @ (values * lengths), -1.0)
            boundaries = np.concatenate([[0], np.cumsum(lengths)])
            shots = [Shot(int(s), int(e), float(v)) for s, e, v in zip(boundaries, boundaries[1:], values)]
            selection = knapsack_select(shots, budget)
            chosen_value = sum(shots[i].value for i in np.flatnonzero(selection))
            self.assertAlmostEqual(chosen_value, totals.max(), delta=1e-9)


class BinarizeAndF1Tests(SimpleTestCase):

    def setUp(self):
        self.shots = [Shot(0, 2, 0.0), Shot(2, 4, 1.0), Shot(4, 6, 0.0)]

    def test_binarize(self):
        self.assertEqual(binarize([False] * 3, self.shots, 6).tolist(), [0] * 6)
        self.assertEqual(binarize([True] * 3, self.shots, 6).tolist(), [1] * 6)
        self.assertEqual(binarize([False, True, False], self.shots, 6).tolist(), [0, 0, 1, 1, 0, 0])

    def test_f1_examples(self):
        self.assertEqual(f1_score([1, 0, 1], [1, 0, 1]), 1.0)
        self.assertEqual(f1_score([1, 1, 0, 0], [0, 0, 1, 1]), 0.0)
        self.assertAlmostEqual(f1_score([1, 1, 0, 0], [1, 0, 1, 0]), 0.5)
        self.assertEqual(f1_score([0, 0], [1, 0]), 0.0)

    def test_f1_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.integers(0, 2, size=(2, 12))
            self.assertEqual(f1_score(a, b), f1_score(b, a))

    def test_f1_length_mismatch(self):
        with self.assertRaises(LengthMismatchError):
            f1_score([1, 0], [1])

    def test_budget(self):
        self.assertEqual(summary_budget(100, 0.15), 15)
        self.assertEqual(summary_budget(99, 0.15), 14)


class EvaluateDatasetTests(SimpleTestCase):

    def test_single_annotator_identical(self):
        report = evaluate_dataset({'v': FIRST_TWO}, [gt('v', [FIRST_TWO])], budget_fraction=0.5)
        self.assertEqual(report.mean_f1, 1.0)

    def test_protocol_arithmetic(self):
        gts = [gt('v', [FIRST_TWO, LAST])]
        scores = {'v': FIRST_TWO}
        self.assertEqual(evaluate_dataset(scores, gts, 'tvsum_avg', 0.5).mean_f1, 0.5)
        self.assertEqual(evaluate_dataset(scores, gts, 'summe_max', 0.5).mean_f1, 1.0)

    def test_hand_built_table(self):
        scores = {'v1': FIRST_TWO, 'v2': FIRST_TWO, 'v3': LAST, 'v4': FIRST_TWO, 'v5': LAST}
        gts = [
            gt('v1', [FIRST_TWO, LAST]),
            gt('v2', [MIDDLE, MIDDLE]),
            gt('v3', [LAST, FIRST_TWO]),
            gt('v4', [FIRST, MIDDLE]),
            gt('v5', [MIDDLE, FIRST]),
        ]
        expected_avg = {'v1': 0.5, 'v2': 0.75, 'v3': 0.5, 'v4': (4 / 7 + 0.75) / 2, 'v5': 0.0}
        expected_max = {'v1': 1.0, 'v2': 0.75, 'v3': 1.0, 'v4': 0.75, 'v5': 0.0}
        for protocol, expected in (('tvsum_avg', expected_avg), ('summe_max', expected_max)):
            report = evaluate_dataset(scores, gts, protocol, 0.5)
            for video_id, value in expected.items():
                self.assertAlmostEqual(report.per_video[video_id], value, places=12)
            self.assertAlmostEqual(report.mean_f1, np.mean(list(expected.values())), places=12)

    def test_invariant_to_video_order(self):
        rng = np.random.default_rng(0)
        gts = [gt(f'v{i}', rng.uniform(size=(3, 10))) for i in range(6)]
        scores = {summary.video_id: rng.uniform(size=10) for summary in gts}
        forward = evaluate_dataset(scores, gts).as_dict()
        shuffled = dict(reversed(list(scores.items())))
        self.assertEqual(forward, evaluate_dataset(shuffled, gts[::-1]).as_dict())

    def test_missing_video(self):
        with self.assertRaises(MissingVideoError) as ctx:
            evaluate_dataset({'v': FIRST_TWO}, [gt('v', [FIRST_TWO]), gt('w', [LAST])])
        self.assertEqual(ctx.exception.missing, ['w'])

    def test_subset_of_videos(self):
        report = evaluate_dataset(
            {'v': FIRST_TWO}, [gt('v', [FIRST_TWO]), gt('w', [LAST])], budget_fraction=0.5, video_ids=['v'],
        )
        self.assertEqual(list(report.per_video), ['v'])

    def test_report_format(self):
        report = evaluate_dataset({'v': FIRST_TWO}, [gt('v', [FIRST_TWO])], budget_fraction=0.5).as_dict()
        self.assertEqual(
            set(report), {'per_video', 'mean_f1', 'protocol', 'budget_fraction', 'user_summaries'}
        )

    def test_form(self):
        self.assertTrue(EvaluationForm(data={'budget_fraction': 0.15, 'protocol': 'summe_max'}).is_valid())
        form = EvaluationForm(data={'budget_fraction': 0, 'protocol': 'other'})
        self.assertEqual(set(form.errors), {'budget_fraction', 'protocol'})


class EvaluateCommandTests(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        write_json(self.root / 'gt' / 'v.json', summary_to_record(gt('v', [FIRST_TWO, LAST])))
        store = FeatureStore(self.root / 'scores')
        write_scores(store, SummaryScores('v', np.array(FIRST_TWO, dtype=np.float32)))

    def _call(self, *args):
        call_command(
            'evaluate', '--scores', str(self.root / 'scores'), '--gt', str(self.root / 'gt'),
            '--budget', '0.5', *args, stdout=io.StringIO(),
        )
        return json.loads(self.report_path.read_text())

    @property
    def report_path(self):
        return self.root / 'scores' / REPORT_DIRNAME / REPORT_FILENAME

    def test_protocol_flags(self):
        self.assertEqual(self._call('--protocol', 'tvsum_avg')['mean_f1'], 0.5)
        self.assertEqual(self._call('--protocol', 'summe_max')['mean_f1'], 1.0)

    def test_perfect_scores(self):
        write_json(self.root / 'gt' / 'v.json', summary_to_record(gt('v', [FIRST_TWO])))
        report = self._call()
        self.assertEqual(report['mean_f1'], 1.0)
        self.assertEqual(report['budget_fraction'], 0.5)
        self.assertTrue((self.root / 'scores' / 'evaluation' / 'manifest.json').exists())

    def test_rerun_writes_identical_report(self):
        self._call()
        first = self.report_path.read_bytes()
        self._call()
        self.assertEqual(self.report_path.read_bytes(), first)
        self.assertEqual(self.report_path.name, 'report.json')

    def test_empty_scores_dir(self):
        with self.assertRaises(CommandError) as ctx:
            call_command(
                'evaluate', '--scores', str(self.root / 'empty'), '--gt', str(self.root / 'gt'),
                stdout=io.StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, 2)

    def test_missing_video(self):
        write_json(self.root / 'gt' / 'w.json', summary_to_record(gt('w', [LAST])))
        with self.assertRaises(CommandError) as ctx:
            self._call()
        self.assertNotEqual(ctx.exception.returncode, 0)
        self.assertIn('w', str(ctx.exception))
