"""
Frozen vision-language encoder behind two pure functions.

``encode_frames`` and ``encode_texts`` are referentially transparent for a
given handle. The ``stub`` backend hashes each input together with the seed
into a pseudo-random unit vector, so tests and desk-scale training never need
model weights. The ``vit-b16`` backend wraps CLIP ViT-B/16 from
``transformers`` and keeps it frozen.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from core.domain import FrameFeatures, validate
from core.exceptions import EncoderError

logger = logging.getLogger(__name__)

STUB = 'stub'
VIT_B16 = 'vit-b16'
ENCODER_NAMES = (STUB, VIT_B16)

CLIP_VIT_B16_ID = 'openai/clip-vit-base-patch16'
CLIP_VIT_B16_DIM = 512


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    embed_dim: int
    logit_scale: float
    seed: int
    weights_path: str


@dataclass(frozen=True)
class EncoderHandle:
    name: str
    embed_dim: int
    logit_scale: float
    seed: int = 0
    backend: object = field(default=None, compare=False, repr=False)


class StubBackend:
    """Deterministic hash-to-unit-vector encoder."""

    def __init__(self, embed_dim, seed):
        self.embed_dim = embed_dim
        self.seed = seed

    def _embed(self, kind: bytes, payload: bytes):
        digest = hashlib.blake2b(
            kind + b'\0' + payload,
            digest_size=32,
            key=self.seed.to_bytes(8, 'little', signed=True),
        ).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype='<u4'))
        vector = rng.standard_normal(self.embed_dim)
        return (vector / np.linalg.norm(vector)).astype(np.float32)

    def embed_images(self, images):
        return np.stack([
            self._embed(b'image', f'{image.mode}:{image.size}'.encode() + image.tobytes())
            for image in images
        ])

    def embed_raw(self, payloads):
        return np.stack([self._embed(b'frame', payload) for payload in payloads])

    def embed_texts(self, sentences):
        return np.stack([self._embed(b'text', sentence.encode('utf-8')) for sentence in sentences])


class ClipBackend:
    """CLIP ViT-B/16 image and text towers, frozen."""

    def __init__(self, weights_path=''):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        source = weights_path or CLIP_VIT_B16_ID
        logger.info('Loading CLIP weights from %s', source)
        self._torch = torch
        self.model = CLIPModel.from_pretrained(source).eval()
        self.processor = CLIPProcessor.from_pretrained(source)
        for parameter in self.model.parameters():
            parameter.requires_grad = False

    def logit_scale(self):
        return float(self.model.logit_scale.exp())

    def embed_images(self, images):
        with self._torch.no_grad():
            inputs = self.processor(images=list(images), return_tensors='pt')
            features = self.model.get_image_features(**inputs)
        return features.numpy().astype(np.float32)

    def embed_raw(self, payloads):
        raise EncoderError('the CLIP backend needs decoded images, not raw frame bytes')

    def embed_texts(self, sentences):
        with self._torch.no_grad():
            inputs = self.processor(text=list(sentences), return_tensors='pt', padding=True)
            features = self.model.get_text_features(**inputs)
        return features.numpy().astype(np.float32)


def load_encoder(config: EncoderConfig) -> EncoderHandle:
    if config.name == STUB:
        backend = StubBackend(config.embed_dim, config.seed)
        return EncoderHandle(STUB, config.embed_dim, config.logit_scale, config.seed, backend)
    if config.name == VIT_B16:
        if config.embed_dim != CLIP_VIT_B16_DIM:
            raise EncoderError(f'{VIT_B16} embeds to {CLIP_VIT_B16_DIM} dims, config says {config.embed_dim}')
        backend = ClipBackend(config.weights_path)
        return EncoderHandle(VIT_B16, CLIP_VIT_B16_DIM, backend.logit_scale(), config.seed, backend)
    raise EncoderError(f'unknown encoder {config.name!r}, expected one of {ENCODER_NAMES}')


def stub_encoder(embed_dim=16, seed=0, logit_scale=100.0) -> EncoderHandle:
    return load_encoder(EncoderConfig(STUB, embed_dim, logit_scale, seed, ''))


def _as_image(frame):
    if isinstance(frame, Image.Image):
        return frame.convert('RGB')
    if isinstance(frame, (str, Path)):
        with Image.open(frame) as image:
            return image.convert('RGB')
    if isinstance(frame, np.ndarray) and frame.ndim == 3:
        return Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8)).convert('RGB')
    raise EncoderError(f'cannot read frame of type {type(frame).__name__}')


def encode_frames(handle: EncoderHandle, frames, video_id='video', fps=2.0) -> FrameFeatures:
    """
    Encode a frame sequence into FrameFeatures.

    ``frames`` is either a T×D array of precomputed features, passed through
    after validation, or a sequence of images (PIL images, paths, H×W×C
    arrays) or raw frame bytes.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 2:
        matrix = frames.astype(np.float32)
        if matrix.shape[1] != handle.embed_dim:
            raise EncoderError(
                f'precomputed features have D={matrix.shape[1]}, encoder embeds to {handle.embed_dim}'
            )
    else:
        frames = list(frames)
        if not frames:
            raise EncoderError('no frames to encode')
        if all(isinstance(frame, bytes) for frame in frames):
            matrix = handle.backend.embed_raw(frames)
        else:
            matrix = handle.backend.embed_images([_as_image(frame) for frame in frames])
    if matrix.shape[0] == 0:
        raise EncoderError('no frames to encode')
    if (np.linalg.norm(matrix, axis=1) == 0).any():
        raise EncoderError('encoded features contain a zero row')
    return validate(FrameFeatures(
        video_id=video_id,
        features=matrix,
        fps=fps,
        duration_sec=matrix.shape[0] / fps,
    ))


def encode_texts(handle: EncoderHandle, sentences) -> np.ndarray:
    sentences = list(sentences)
    if not sentences:
        raise EncoderError('no sentences to encode')
    for index, sentence in enumerate(sentences):
        if not sentence or not sentence.strip():
            raise EncoderError(f'sentence {index} is empty')
    matrix = handle.backend.embed_texts(sentences)
    if matrix.shape[1] != handle.embed_dim:
        raise EncoderError(f'text encoder returned D={matrix.shape[1]}, expected {handle.embed_dim}')
    return matrix
