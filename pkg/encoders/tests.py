import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from PIL import Image

from core.exceptions import EncoderError

from .bridge import EncoderConfig, encode_frames, encode_texts, load_encoder, stub_encoder
from .forms import EncoderForm


def _frames(count, size=8):
    rng = np.random.default_rng(123)
    return [
        Image.fromarray(rng.integers(0, 255, size=(size, size, 3), dtype=np.uint8))
        for _ in range(count)
    ]


class EncodeFramesTests(SimpleTestCase):

    def test_stub_is_deterministic(self):
        handle = stub_encoder(embed_dim=16, seed=7)
        frames = _frames(5)
        first = encode_frames(handle, frames)
        second = encode_frames(stub_encoder(embed_dim=16, seed=7), frames)
        self.assertEqual(first.features.shape, (5, 16))
        self.assertTrue(np.array_equal(first.features, second.features))

    def test_stub_rows_are_unit_vectors(self):
        features = encode_frames(stub_encoder(embed_dim=16), _frames(3)).features
        np.testing.assert_allclose(np.linalg.norm(features, axis=1), 1.0, atol=1e-6)

    def test_output_independent_of_call_order(self):
        handle = stub_encoder(embed_dim=16, seed=1)
        frames = _frames(4)
        forward = encode_frames(handle, frames).features
        backward = encode_frames(handle, frames[::-1]).features
        self.assertTrue(np.array_equal(forward, backward[::-1]))

    def test_seed_changes_embedding(self):
        frames = _frames(2)
        a = encode_frames(stub_encoder(embed_dim=16, seed=1), frames).features
        b = encode_frames(stub_encoder(embed_dim=16, seed=2), frames).features
        self.assertFalse(np.array_equal(a, b))

    def test_uint8_arrays_and_raw_bytes(self):
        handle = stub_encoder(embed_dim=8)
        arrays = [np.asarray(frame) for frame in _frames(2)]
        from_arrays = encode_frames(handle, arrays).features
        from_images = encode_frames(handle, _frames(2)).features
        self.assertTrue(np.array_equal(from_arrays, from_images))
        raw = encode_frames(handle, [b'frame-0', b'frame-1']).features
        self.assertEqual(raw.shape, (2, 8))

    def test_precomputed_rows_pass_through(self):
        handle = stub_encoder(embed_dim=512)
        rows = np.random.default_rng(0).standard_normal((10, 512)).astype(np.float32)
        features = encode_frames(handle, rows, video_id='v1', fps=2.0)
        self.assertTrue(np.array_equal(features.features, rows))
        self.assertEqual(features.duration_sec, 5.0)

    def test_precomputed_dimension_mismatch(self):
        handle = stub_encoder(embed_dim=512)
        with self.assertRaises(EncoderError):
            encode_frames(handle, np.ones((10, 256), dtype=np.float32))

    def test_zero_row_rejected(self):
        rows = np.ones((3, 4), dtype=np.float32)
        rows[1] = 0
        with self.assertRaises(EncoderError):
            encode_frames(stub_encoder(embed_dim=4), rows)

    def test_non_finite_rows_fail_validation(self):
        rows = np.ones((3, 4), dtype=np.float32)
        rows[0, 0] = np.nan
        with self.assertRaises((EncoderError, ValidationError)):
            encode_frames(stub_encoder(embed_dim=4), rows)

    def test_empty_sequence(self):
        with self.assertRaises(EncoderError):
            encode_frames(stub_encoder(), [])


class EncodeTextsTests(SimpleTestCase):

    def test_prompt_matrix_shape(self):
        handle = stub_encoder(embed_dim=512)
        prompts = [f'An image of object{i}.' for i in range(100)]
        self.assertEqual(encode_texts(handle, prompts).shape, (100, 512))

    def test_identical_sentences_identical_rows(self):
        matrix = encode_texts(stub_encoder(embed_dim=16), ['a dog', 'a dog'])
        self.assertTrue(np.array_equal(matrix[0], matrix[1]))

    def test_text_and_image_spaces_differ(self):
        handle = stub_encoder(embed_dim=16)
        text = encode_texts(handle, ['frame-0'])
        frame = encode_frames(handle, [b'frame-0']).features
        self.assertFalse(np.array_equal(text, frame))

    def test_empty_sentence(self):
        with self.assertRaises(EncoderError):
            encode_texts(stub_encoder(), ['a cat', '  '])
        with self.assertRaises(EncoderError):
            encode_texts(stub_encoder(), [])


class LoadEncoderTests(SimpleTestCase):

    def test_unknown_name(self):
        with self.assertRaises(EncoderError):
            load_encoder(EncoderConfig('resnet', 16, 100.0, 0, ''))

    def test_clip_dimension_guard(self):
        with self.assertRaises(EncoderError):
            load_encoder(EncoderConfig('vit-b16', 256, 100.0, 0, ''))

    def test_form_builds_config(self):
        form = EncoderForm(data={
            'name': 'stub', 'embed_dim': 32, 'logit_scale': 100.0, 'seed': 3, 'weights_path': '',
        })
        self.assertTrue(form.is_valid(), form.errors)
        handle = load_encoder(form.to_config())
        self.assertEqual((handle.name, handle.embed_dim, handle.seed), ('stub', 32, 3))

    def test_form_rejects_bad_values(self):
        form = EncoderForm(data={
            'name': 'stub', 'embed_dim': 0, 'logit_scale': -1, 'seed': 0, 'weights_path': '',
        })
        self.assertFalse(form.is_valid())
        self.assertIn('embed_dim', form.errors)
        self.assertIn('logit_scale', form.errors)
