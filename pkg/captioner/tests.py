import itertools
import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase

from core.domain import (
    BOS_INDEX,
    EOS_INDEX,
    PAD_INDEX,
    UNK_INDEX,
    CaptionerOutput,
    CaptionEvent,
    DenseCaptionAnnotation,
)
from core.factories import DenseCaptionAnnotationFactory
from core.utils import seed_everything

from .forms import CaptionerConfigForm
from .matching import decode_captions, match_proposals, matching_cost
from .model import CaptionerConfig, DenseCaptioner, caption_forward
from .vocab import Vocabulary

TINY = CaptionerConfig(
    num_queries=10, max_caption_len=6, embed_dim=16, enc_layers=1, dec_layers=1,
    num_heads=2, dropout=0.0,
)


def output_from(segments, confidence_logits, caption_logits=None, vocab_size=8):
    segments = torch.tensor(segments, dtype=torch.float64)
    n = segments.shape[0]
    if caption_logits is None:
        caption_logits = torch.zeros(n, 3, vocab_size, dtype=torch.float64)
    return CaptionerOutput(
        segments=segments,
        confidence_logits=torch.tensor(confidence_logits, dtype=torch.float64),
        caption_logits=caption_logits,
        event_count_logits=torch.zeros(n + 1, dtype=torch.float64),
    )


class CaptionForwardTests(SimpleTestCase):

    def setUp(self):
        seed_everything(0)
        self.model = DenseCaptioner(TINY, input_dim=12, vocab_size=30)

    def test_fixed_number_of_proposals(self):
        output = caption_forward(self.model, torch.randn(20, 12))
        self.assertEqual(len(output), 10)
        self.assertEqual(len(output.proposals), 10)
        self.assertEqual(output.caption_logits.shape, (10, 6, 30))
        self.assertEqual(output.event_count_logits.shape, (11,))

    def test_segments_normalized_and_widths_positive(self):
        output = caption_forward(self.model, torch.randn(20, 12))
        self.assertTrue((output.segments[:, 1] > 0).all())
        self.assertTrue(((output.segments >= 0) & (output.segments <= 1)).all())

    def test_zero_input_deterministic_in_eval(self):
        self.model.eval()
        with torch.no_grad():
            first = caption_forward(self.model, torch.zeros(20, 12))
            second = caption_forward(self.model, torch.zeros(20, 12))
        self.assertTrue(torch.equal(first.segments, second.segments))
        self.assertTrue(torch.equal(first.caption_logits, second.caption_logits))

    def test_teacher_forced_logits(self):
        input_ids = torch.full((10, 6), PAD_INDEX, dtype=torch.long)
        input_ids[:, 0] = BOS_INDEX
        output = self.model(torch.randn(8, 12), input_ids)
        self.assertEqual(output.caption_logits.shape, (10, 6, 30))

    def test_event_count_classes_follow_config(self):
        model = DenseCaptioner(CaptionerConfig(
            num_queries=4, max_caption_len=3, embed_dim=8, enc_layers=1, dec_layers=1,
            num_heads=2, dropout=0.0, max_event_count=2,
        ), input_dim=5, vocab_size=10)
        self.assertEqual(model.propose(torch.randn(6, 5)).event_count_logits.shape, (3,))

    def test_gradients_match_finite_differences(self):
        model = DenseCaptioner(CaptionerConfig(
            num_queries=3, max_caption_len=3, embed_dim=8, enc_layers=1, dec_layers=1,
            num_heads=2, dropout=0.0,
        ), input_dim=3, vocab_size=7).double()
        input_ids = torch.tensor([[BOS_INDEX, 4, 5]] * 3)

        def forward(weighted):
            output = model(weighted, input_ids)
            return (output.segments, output.confidence_logits,
                    output.event_count_logits, output.caption_logits)

        weighted = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(forward, (weighted,), eps=1e-6, atol=1e-6, rtol=1e-4))


class MatchProposalsTests(SimpleTestCase):

    def test_exact_overlap_wins(self):
        segments = [[0.9, 0.05], [0.85, 0.05], [0.95, 0.05], [0.3, 0.2], [0.8, 0.05]]
        pred = output_from(segments, [0.0] * 5)
        gt = DenseCaptionAnnotation('v', [CaptionEvent(2.0, 4.0, ('a',))], 10.0)
        self.assertEqual(match_proposals(pred, gt).pairs, ((0, 3),))

    def test_no_events(self):
        pred = output_from([[0.5, 0.2]], [0.0])
        gt = DenseCaptionAnnotation('v', [], 10.0)
        self.assertEqual(len(match_proposals(pred, gt)), 0)

    def test_tie_goes_to_lower_index(self):
        segments = [[0.9, 0.05], [0.3, 0.2], [0.3, 0.2], [0.9, 0.05]]
        pred = output_from(segments, [0.0, 1.0, 1.0, 0.0])
        gt = DenseCaptionAnnotation('v', [CaptionEvent(2.0, 4.0, ('a',))], 10.0)
        self.assertEqual(match_proposals(pred, gt).pairs, ((0, 1),))

    def test_more_events_than_queries_keeps_longest(self):
        pred = output_from([[0.2, 0.1], [0.7, 0.3]], [0.0, 0.0])
        gt = DenseCaptionAnnotation('v', [
            CaptionEvent(0.0, 1.0, ('a',)),
            CaptionEvent(2.0, 5.0, ('b',)),
            CaptionEvent(6.0, 8.0, ('c',)),
        ], 10.0)
        with self.assertLogs('captioner.matching', level='WARNING'):
            matching = match_proposals(pred, gt)
        self.assertEqual(matching.dropped_events, (0,))
        self.assertEqual(sorted(event for event, _ in matching.pairs), [1, 2])

    def test_equals_exhaustive_minimum(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            num_queries = int(rng.integers(1, 9))
            num_events = int(rng.integers(1, min(4, num_queries) + 1))
            segments = np.stack([rng.uniform(0.05, 0.95, num_queries), rng.uniform(0.01, 0.5, num_queries)], 1)
            pred = output_from(segments.tolist(), rng.normal(size=num_queries).tolist())
            events = []
            for _ in range(num_events):
                start = float(rng.uniform(0, 9))
                events.append(CaptionEvent(start, start + float(rng.uniform(0.1, 10 - start)), ('x',)))
            gt = DenseCaptionAnnotation('v', events, 10.0)
            cost = matching_cost(pred, gt.normalized_segments(), 4.0, 2.0)
            best = min(
                sum(cost[p, e] for e, p in enumerate(assignment))
                for assignment in itertools.permutations(range(num_queries), num_events)
            )
            matching = match_proposals(pred, gt)
            self.assertEqual(len(matching), num_events)
            self.assertEqual(len({p for _, p in matching.pairs}), num_events)
            total = sum(cost[p, e] for e, p in matching.pairs)
            self.assertAlmostEqual(total, best, delta=1e-7)


class DecodeCaptionsTests(SimpleTestCase):

    def setUp(self):
        self.vocab = Vocabulary(['<bos>', '<eos>', '<pad>', '<unk>', 'a', 'b'])

    def _forced(self, sequence, n=3):
        logits = torch.full((n, len(sequence), 6), -10.0, dtype=torch.float64)
        for position, token in enumerate(sequence):
            logits[:, position, token] = 10.0
        return logits

    def test_threshold_one_is_empty(self):
        pred = output_from([[0.5, 0.2]] * 3, [50.0, 0.0, -1.0], self._forced([4, 1]), vocab_size=6)
        self.assertEqual(decode_captions(pred, 1.0, 10.0, self.vocab), [])

    def test_threshold_zero_keeps_all(self):
        pred = output_from([[0.5, 0.2], [0.1, 0.1], [0.9, 0.3]], [2.0, 0.0, -1.0], self._forced([4, 1]), vocab_size=6)
        captions = decode_captions(pred, 0.0, 10.0, self.vocab)
        self.assertEqual(len(captions), 3)
        self.assertEqual([c.start_sec for c in captions], sorted(c.start_sec for c in captions))
        self.assertTrue(all(c.start_sec < c.end_sec for c in captions))

    def test_forced_sequence(self):
        logits = self._forced([BOS_INDEX, 4, 5, EOS_INDEX, 4], n=1)
        pred = output_from([[0.5, 0.2]], [3.0], logits, vocab_size=6)
        [caption] = decode_captions(pred, 0.5, 10.0, self.vocab)
        self.assertEqual(caption.sentence, 'a b')
        self.assertAlmostEqual(caption.start_sec, 4.0)
        self.assertAlmostEqual(caption.end_sec, 6.0)

    def test_segments_clamped_to_video(self):
        pred = output_from([[0.02, 0.2]], [3.0], self._forced([4, 1], n=1), vocab_size=6)
        [caption] = decode_captions(pred, 0.5, 10.0, self.vocab)
        self.assertEqual(caption.start_sec, 0.0)
        self.assertLess(caption.start_sec, caption.end_sec)


class VocabularyTests(SimpleTestCase):

    def test_build_orders_reserved_then_frequency(self):
        annotations = [
            DenseCaptionAnnotationFactory(),
            DenseCaptionAnnotationFactory(events=[CaptionEvent(0, 1, ('dog', 'barks'))]),
        ]
        vocab = Vocabulary.build(annotations)
        self.assertEqual(vocab.tokens[:4], ['<bos>', '<eos>', '<pad>', '<unk>'])
        self.assertEqual(vocab.tokens[4], 'dog')
        self.assertEqual(vocab.lookup('zebra'), UNK_INDEX)
        self.assertEqual(vocab.lookup(999), UNK_INDEX)

    def test_min_count(self):
        vocab = Vocabulary.build([DenseCaptionAnnotationFactory()], min_count=2)
        self.assertEqual(vocab.tokens, ['<bos>', '<eos>', '<pad>', '<unk>', 'dog'])

    def test_teacher_forcing_alignment(self):
        vocab = Vocabulary(['<bos>', '<eos>', '<pad>', '<unk>', 'a', 'b'])
        self.assertEqual(vocab.input_ids(('a', 'b'), 5), [BOS_INDEX, 4, 5, PAD_INDEX, PAD_INDEX])
        self.assertEqual(vocab.target_ids(('a', 'b'), 5), [4, 5, EOS_INDEX, PAD_INDEX, PAD_INDEX])
        self.assertEqual(vocab.target_ids(('a', 'b', 'a'), 2), [4, 5])

    def test_file_round_trip(self):
        vocab = Vocabulary.build([DenseCaptionAnnotationFactory()])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'vocab.json'
            vocab.save(path)
            self.assertEqual(Vocabulary.load(path), vocab)

    def test_reserved_tokens_required(self):
        with self.assertRaises(ValueError):
            Vocabulary(['a', '<bos>', '<eos>', '<pad>', '<unk>'])


class CaptionerConfigFormTests(SimpleTestCase):

    def test_defaults_with_null_event_count(self):
        form = CaptionerConfigForm(data={
            'num_queries': 10, 'max_caption_len': 20, 'embed_dim': 256, 'enc_layers': 2,
            'dec_layers': 2, 'num_heads': 4, 'dropout': 0.1, 'max_event_count': None,
            'match_giou_weight': 4.0, 'match_cls_weight': 2.0, 'confidence_threshold': 0.5,
            'vocab_min_count': 1,
        })
        self.assertTrue(form.is_valid(), form.errors)
        config = form.to_config()
        self.assertIsNone(config.max_event_count)
        self.assertEqual(config.event_count_max, 10)
