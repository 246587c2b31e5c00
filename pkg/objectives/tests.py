import math

import numpy as np
import torch
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from captioner.matching import Matching
from captioner.vocab import Vocabulary
from core.domain import EOS_INDEX, PAD_INDEX, UNK_INDEX, CaptionerOutput, CaptionEvent, DenseCaptionAnnotation
from core.exceptions import LengthMismatchError
from core.factories import ClipPriorFactory, SummaryScoresFactory

from .forms import LossWeightsForm
from .losses import (
    LossWeights,
    caption_loss,
    caption_loss_terms,
    caption_token_loss,
    event_count_loss,
    finetune_mse,
    focal_loss,
    giou_1d,
    length_loss,
    pairwise_giou,
    prior_loss,
    rescale_scores,
    total_loss,
    variance_loss,
)

VOCAB = Vocabulary(['<bos>', '<eos>', '<pad>', '<unk>', 'a', 'b'])
BIG = 50.0


def t(values):
    return torch.tensor(values, dtype=torch.float64)


def gradcheck(fn, *inputs):
    return torch.autograd.gradcheck(fn, inputs, eps=1e-5, atol=1e-7, rtol=1e-4)


def perfect_output(center, width=0.2):
    """Two proposals; proposal 0 is confident with caption 'a', proposal 1 is empty."""
    caption_logits = torch.full((2, 3, 6), -BIG, dtype=torch.float64)
    for position, token in enumerate([4, EOS_INDEX, PAD_INDEX]):
        caption_logits[0, position, token] = BIG
    count_logits = torch.full((3,), -BIG, dtype=torch.float64)
    count_logits[1] = BIG
    return CaptionerOutput(
        segments=t([[center, width], [0.9, 0.05]]),
        confidence_logits=t([BIG, -BIG]),
        caption_logits=caption_logits,
        event_count_logits=count_logits,
    )


ONE_EVENT = DenseCaptionAnnotation('v', [CaptionEvent(2.0, 4.0, ('a',))], 10.0)
MATCH = Matching(pairs=((0, 0),))


class GeneralizedIoUTests(SimpleTestCase):

    def test_identity(self):
        self.assertAlmostEqual(giou_1d([0, 2], [0, 2]).item(), 1.0)

    def test_partial_overlap(self):
        self.assertAlmostEqual(giou_1d([0, 2], [1, 3]).item(), 1 / 3)

    def test_disjoint(self):
        self.assertAlmostEqual(giou_1d([0, 1], [2, 3]).item(), -1 / 3)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = np.sort(rng.uniform(0, 10, 2)) + [0, 0.01]
            b = np.sort(rng.uniform(0, 10, 2)) + [0, 0.01]
            self.assertAlmostEqual(giou_1d(a, b).item(), giou_1d(b, a).item(), places=12)

    def test_degenerate_segment(self):
        with self.assertRaises(ValidationError):
            giou_1d([1, 1], [0, 2])

    def test_pairwise_shape(self):
        matrix = pairwise_giou(t([[0, 1], [0, 2], [1, 3]]), t([[0, 2], [5, 6]]))
        self.assertEqual(matrix.shape, (3, 2))
        self.assertAlmostEqual(matrix[1, 0].item(), 1.0)


class FocalAndCountTests(SimpleTestCase):

    def test_perfect_positive(self):
        self.assertLess(focal_loss(t([BIG]), t([1.0])).item(), 1e-12)

    def test_half_probability_positive(self):
        expected = -0.25 * 0.25 * math.log(0.5)
        self.assertAlmostEqual(focal_loss(t([0.0]), t([1.0])).item(), expected, places=12)

    def test_confident_negatives(self):
        self.assertLess(focal_loss(t([-BIG, -BIG, -BIG]), t([0.0, 0.0, 0.0])).item(), 1e-12)

    def test_focal_length_mismatch(self):
        with self.assertRaises(LengthMismatchError):
            focal_loss(t([0.0, 1.0]), t([1.0]))

    def test_count_one_hot(self):
        logits = torch.full((11,), -BIG, dtype=torch.float64)
        logits[3] = BIG
        self.assertLess(event_count_loss(logits, 3).item(), 1e-12)

    def test_count_uniform(self):
        self.assertAlmostEqual(event_count_loss(torch.zeros(11, dtype=torch.float64), 4).item(), math.log(11))

    def test_count_clamped(self):
        logits = t(np.arange(11))
        self.assertEqual(event_count_loss(logits, 15).item(), event_count_loss(logits, 10).item())


class CaptionTokenLossTests(SimpleTestCase):

    def test_one_hot_targets(self):
        logits = torch.full((4, 6), -BIG, dtype=torch.float64)
        for position, token in enumerate([4, 5, EOS_INDEX, PAD_INDEX]):
            logits[position, token] = BIG
        self.assertLess(caption_token_loss(logits, [4, 5, EOS_INDEX]).item(), 1e-12)

    def test_uniform_logits(self):
        logits = torch.zeros(5, 32, dtype=torch.float64)
        self.assertAlmostEqual(caption_token_loss(logits, [4, 7, 9, EOS_INDEX]).item(), math.log(32))

    def test_out_of_vocabulary_maps_to_unk(self):
        logits = t(np.random.default_rng(0).normal(size=(3, 6)))
        self.assertEqual(
            caption_token_loss(logits, [99, EOS_INDEX]).item(),
            caption_token_loss(logits, [UNK_INDEX, EOS_INDEX]).item(),
        )
        self.assertEqual(
            caption_token_loss(logits, ['zebra', 'a'], vocab=VOCAB).item(),
            caption_token_loss(logits, [UNK_INDEX, 4]).item(),
        )

    def test_all_pad_is_zero(self):
        with self.assertLogs('objectives.losses', level='WARNING'):
            loss = caption_token_loss(torch.zeros(3, 6, dtype=torch.float64), [])
        self.assertEqual(loss.item(), 0.0)

    def test_truncated_to_length(self):
        logits = torch.zeros(2, 6, dtype=torch.float64)
        self.assertAlmostEqual(caption_token_loss(logits, [4, 5, 4, 5]).item(), math.log(6))


class CaptionLossTests(SimpleTestCase):

    def test_perfect_prediction(self):
        loss = caption_loss(perfect_output(0.3), ONE_EVENT, MATCH, LossWeights(), VOCAB)
        self.assertLess(abs(loss.item()), 1e-6)

    def test_only_giou_imperfect(self):
        terms = caption_loss_terms(perfect_output(0.4), ONE_EVENT, MATCH, VOCAB)
        self.assertAlmostEqual(terms['giou'].item(), 2 / 3, places=6)
        loss = caption_loss(perfect_output(0.4), ONE_EVENT, MATCH, LossWeights(), VOCAB)
        self.assertAlmostEqual(loss.item(), 4 * (2 / 3), places=6)

    def test_empty_ground_truth(self):
        pred = perfect_output(0.3)
        empty = DenseCaptionAnnotation('v', [], 10.0)
        loss = caption_loss(pred, empty, Matching(), LossWeights(), VOCAB)
        expected = (
            2 * focal_loss(pred.confidence_logits, t([0.0, 0.0]))
            + 0.5 * event_count_loss(pred.event_count_logits, 0)
        )
        self.assertAlmostEqual(loss.item(), expected.item(), places=9)

    def test_gradient_wrt_segments_and_logits(self):
        base = perfect_output(0.35)

        def fn(segments, confidence, captions):
            pred = CaptionerOutput(segments, confidence, captions, base.event_count_logits)
            return caption_loss(pred, ONE_EVENT, MATCH, LossWeights(), VOCAB)

        generator = torch.Generator().manual_seed(0)
        segments = t([[0.35, 0.25], [0.7, 0.1]]).requires_grad_()
        confidence = torch.randn(2, generator=generator, dtype=torch.float64, requires_grad=True)
        captions = torch.randn(2, 3, 6, generator=generator, dtype=torch.float64, requires_grad=True)
        self.assertTrue(gradcheck(fn, segments, confidence, captions))


class ScoreLossTests(SimpleTestCase):

    def test_prior_examples(self):
        prior = [1, 1, 0, 0]
        self.assertEqual(prior_loss(t([1, 1, 0.7, 0.2]), t(prior)).item(), 0.0)
        self.assertAlmostEqual(prior_loss(t([0.5, 0.5, 0.9, 0.9]), t(prior)).item(), 0.125)
        self.assertEqual(prior_loss(t([0.3, 0.9, 0.1, 0.5]), t([0, 0, 0, 0])).item(), 0.0)

    def test_prior_domain_objects(self):
        scores = SummaryScoresFactory(num_frames=6)
        prior = ClipPriorFactory(num_frames=6)
        expected = np.mean((prior.prior * scores.scores - prior.prior) ** 2)
        self.assertAlmostEqual(prior_loss(scores, prior).item(), float(expected), places=6)

    def test_prior_length_mismatch(self):
        with self.assertRaises(LengthMismatchError):
            prior_loss(t([0.5, 0.5]), t([1.0]))

    def test_length_examples(self):
        self.assertAlmostEqual(length_loss(t([0.3] * 4), 0.3).item(), 0.0)
        self.assertAlmostEqual(length_loss(t([1.0] * 4), 0.3).item(), 0.49)
        self.assertAlmostEqual(length_loss(t([0.0, 0.6]), 0.3).item(), 0.0)

    def test_variance_examples(self):
        self.assertAlmostEqual(variance_loss(t([0.4] * 6)).item(), 0.25)
        self.assertAlmostEqual(variance_loss(t([0, 0, 1, 1])).item(), 0.0)
        self.assertAlmostEqual(variance_loss(t([0, 0.5, 1])).item(), 0.25 - 1 / 6)

    def test_variance_non_negative_on_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            self.assertGreaterEqual(variance_loss(t(rng.uniform(size=7))).item(), 0.0)

    def test_finetune_mse_examples(self):
        gt = t([0.2, 0.7, 0.4])
        self.assertEqual(finetune_mse(gt, gt).item(), 0.0)
        self.assertAlmostEqual(finetune_mse(t([1, 0]), t([0, 1])).item(), 1.0)
        self.assertAlmostEqual(finetune_mse(gt + 0.1, gt).item(), 0.01)
        with self.assertRaises(LengthMismatchError):
            finetune_mse(t([1, 0]), t([1]))

    def test_rescale_scores(self):
        np.testing.assert_allclose(rescale_scores([1, 3, 5]), [0, 0.5, 1])
        np.testing.assert_allclose(rescale_scores([2, 2]), [0.5, 0.5])


class TotalLossTests(SimpleTestCase):

    def test_examples(self):
        weights = LossWeights()
        zero = {'cap': 0.0, 'prior': 0.0, 'len': 0.0, 'var': 0.0}
        self.assertEqual(total_loss(zero, weights), 0.0)
        self.assertAlmostEqual(total_loss({**zero, 'cap': 1.0}, weights), 2.0)
        self.assertAlmostEqual(total_loss({**zero, 'prior': 0.1}, weights), 1.0)

    def test_linear_in_each_component(self):
        rng = np.random.default_rng(0)
        weights = LossWeights(beta_cap=1.5, beta_prior=3.0, beta_len=0.25, beta_var=2.0)
        betas = {'cap': 1.5, 'prior': 3.0, 'len': 0.25, 'var': 2.0}
        for _ in range(20):
            components = dict(zip(betas, rng.normal(size=4)))
            expected = sum(betas[name] * value for name, value in components.items())
            self.assertAlmostEqual(total_loss(components, weights), expected, delta=1e-9)


class GradientCheckTests(SimpleTestCase):

    def setUp(self):
        self.generator = torch.Generator().manual_seed(1)

    def _rand(self, *shape, low=0.0, high=1.0):
        values = torch.rand(*shape, generator=self.generator, dtype=torch.float64)
        return (low + (high - low) * values).requires_grad_()

    def test_score_losses(self):
        for _ in range(20):
            scores = self._rand(8, low=0.05, high=0.95)
            prior = (torch.rand(8, generator=self.generator) > 0.5).double()
            gt = torch.rand(8, generator=self.generator, dtype=torch.float64)
            self.assertTrue(gradcheck(lambda s: prior_loss(s, prior), scores))
            self.assertTrue(gradcheck(lambda s: length_loss(s, 0.3), scores))
            self.assertTrue(gradcheck(variance_loss, scores))
            self.assertTrue(gradcheck(lambda s: finetune_mse(s, gt), scores))

    def test_set_losses(self):
        for _ in range(20):
            logits = self._rand(6, low=-3, high=3)
            mask = (torch.rand(6, generator=self.generator) > 0.5).double()
            self.assertTrue(gradcheck(lambda x: focal_loss(x, mask), logits))
            self.assertTrue(gradcheck(lambda x: event_count_loss(x, 2), self._rand(5, low=-2, high=2)))
            captions = self._rand(4, 6, low=-2, high=2)
            self.assertTrue(gradcheck(lambda x: caption_token_loss(x, [4, 5, EOS_INDEX]), captions))

    def test_giou(self):
        for _ in range(20):
            a = torch.tensor([0.1, 0.5], dtype=torch.float64) + self._rand(2, high=0.05).detach()
            b = torch.tensor([0.3, 0.8], dtype=torch.float64) + self._rand(2, high=0.05).detach()
            self.assertTrue(gradcheck(giou_1d, a.requires_grad_(), b.requires_grad_()))


class LossWeightsFormTests(SimpleTestCase):

    def _data(self, **overrides):
        data = {name: value for name, value in LossWeights().__dict__.items()}
        data.update(overrides)
        return data

    def test_defaults(self):
        form = LossWeightsForm(data=self._data())
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.to_config(), LossWeights())

    def test_rejects_negative_and_bad_target(self):
        form = LossWeightsForm(data=self._data(beta_prior=-1, target_length=1.0))
        self.assertFalse(form.is_valid())
        self.assertEqual(set(form.errors), {'beta_prior', 'target_length'})
