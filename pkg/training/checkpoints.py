"""
Checkpoint files.

A checkpoint is ``MAGIC``, the hex sha256 of the payload, then the payload:
a ``torch.save`` archive holding both model configs, the caption vocabulary
and both state dicts. Loading verifies the hash before unpickling anything.
"""
import io
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from captioner.model import CaptionerConfig, DenseCaptioner
from captioner.vocab import Vocabulary
from core.exceptions import CheckpointError, ConfigMismatchError
from core.utils import sha256_bytes
from summarizer.model import FrameSummarizer, SummarizerConfig

logger = logging.getLogger(__name__)

MAGIC = b'VSCKPT01'
DIGEST_BYTES = 64
FORMAT_VERSION = 1

# Fields that change parameter shapes; everything else may differ per run.
SUMMARIZER_SHAPE_FIELDS = ('embed_dim', 'num_layers', 'num_heads', 'mlp_ratio')
CAPTIONER_SHAPE_FIELDS = ('num_queries', 'embed_dim', 'enc_layers', 'dec_layers', 'num_heads', 'event_count_max')


@dataclass
class ModelBundle:
    """Summarizer, captioner and vocabulary trained together."""

    summarizer: FrameSummarizer
    captioner: DenseCaptioner
    vocab: Vocabulary
    train_state: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.summarizer.input_dim

    @property
    def summarizer_config(self) -> SummarizerConfig:
        return self.summarizer.config

    @property
    def captioner_config(self) -> CaptionerConfig:
        return self.captioner.config

    def payload(self):
        return {
            'format_version': FORMAT_VERSION,
            'input_dim': self.input_dim,
            'summarizer_config': asdict(self.summarizer_config),
            'captioner_config': asdict(self.captioner_config),
            'vocab': self.vocab.to_dict(),
            'summarizer': self.summarizer.state_dict(),
            'captioner': self.captioner.state_dict(),
            'train_state': dict(self.train_state),
        }


def build_bundle(input_dim, vocab, summarizer_config, captioner_config, seed=None) -> ModelBundle:
    if seed is not None:
        torch.manual_seed(seed)
    return ModelBundle(
        summarizer=FrameSummarizer(summarizer_config, input_dim),
        captioner=DenseCaptioner(captioner_config, input_dim, len(vocab)),
        vocab=vocab,
    )


def save_checkpoint(bundle: ModelBundle, path) -> str:
    """Write ``bundle`` atomically and return the payload hash."""
    buffer = io.BytesIO()
    torch.save(bundle.payload(), buffer)
    payload = buffer.getvalue()
    digest = sha256_bytes(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix='.ckpt-')
    with os.fdopen(fd, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(digest.encode('ascii'))
        handle.write(payload)
    os.replace(tmp, path)
    logger.info('Saved checkpoint %s (%s)', path, digest[:12])
    return digest


def read_payload(path):
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f'no checkpoint at {path}')
    header = len(MAGIC) + DIGEST_BYTES
    if len(blob) < header or not blob.startswith(MAGIC):
        raise CheckpointError(f'{path} is not a vidsum checkpoint')
    digest = blob[len(MAGIC):header].decode('ascii', errors='replace')
    payload = blob[header:]
    if sha256_bytes(payload) != digest:
        raise CheckpointError(f'{path}: content hash mismatch, the file is corrupt')
    try:
        data = torch.load(io.BytesIO(payload), map_location='cpu', weights_only=True)
    except Exception as exc:
        raise CheckpointError(f'{path}: unreadable payload ({exc})') from exc
    if data.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f'{path}: unsupported format version {data.get("format_version")}')
    return data, digest


def _check_shape(section, stored, requested, names):
    if requested is None:
        return stored
    for name in names:
        if getattr(stored, name) != getattr(requested, name):
            raise ConfigMismatchError(
                f'{section}.{name}: checkpoint has {getattr(stored, name)}, '
                f'configuration asks for {getattr(requested, name)}'
            )
    return requested


def load_checkpoint(path, input_dim=None, summarizer_config=None, captioner_config=None) -> ModelBundle:
    """
    Rebuild the models stored at ``path``.

    Passing the run's configs (and the feature dimension) checks that the
    checkpoint is compatible; their non-shape fields such as dropout then
    take effect on the loaded models.
    """
    data, digest = read_payload(path)
    if input_dim is not None and int(input_dim) != data['input_dim']:
        raise ConfigMismatchError(
            f'features have dimension {input_dim}, checkpoint expects {data["input_dim"]}'
        )
    summarizer_config = _check_shape(
        'summarizer', SummarizerConfig(**data['summarizer_config']), summarizer_config, SUMMARIZER_SHAPE_FIELDS,
    )
    captioner_config = _check_shape(
        'captioner', CaptionerConfig(**data['captioner_config']), captioner_config, CAPTIONER_SHAPE_FIELDS,
    )
    vocab = Vocabulary.from_dict(data['vocab'])
    bundle = build_bundle(data['input_dim'], vocab, summarizer_config, captioner_config)
    try:
        bundle.summarizer.load_state_dict(data['summarizer'])
        bundle.captioner.load_state_dict(data['captioner'])
    except RuntimeError as exc:
        raise ConfigMismatchError(f'{path}: state does not fit the model ({exc})') from exc
    bundle.train_state = dict(data.get('train_state', {}))
    logger.info('Loaded checkpoint %s (%s)', path, digest[:12])
    return bundle


def checkpoint_hash(path) -> str:
    return read_payload(path)[1]
