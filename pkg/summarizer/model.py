"""
Transformer summarizer: frame features in, frame-wise importance out.

Features are projected to tokens, offset by a sinusoidal position code, run
through pre-norm encoder blocks and mapped to one sigmoid score per frame.
"""
import logging
import math
from dataclasses import dataclass

import torch
from django.core.exceptions import ValidationError
from torch import nn

from core.domain import FrameFeatures, SummaryScores, validate
from core.exceptions import SequenceTooLongError, check_same_length

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SummarizerConfig:
    embed_dim: int = 256
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.1
    max_frames: int = 2048

    def clean(self):
        if self.embed_dim % self.num_heads:
            raise ValidationError({'embed_dim': ValidationError(
                f'embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}',
                code='heads',
            )})


def sinusoidal_encoding(length, dim, dtype=torch.float32, device=None):
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    rate = torch.exp(
        torch.arange(0, dim, 2, dtype=dtype, device=device) * (-math.log(10000.0) / dim)
    )
    encoding = torch.zeros(length, dim, dtype=dtype, device=device)
    encoding[:, 0::2] = torch.sin(position * rate)
    encoding[:, 1::2] = torch.cos(position * rate[: dim // 2])
    return encoding


class FrameSummarizer(nn.Module):

    def __init__(self, config: SummarizerConfig, input_dim: int):
        super().__init__()
        validate(config)
        self.config = config
        self.input_dim = input_dim
        self.embed = nn.Linear(input_dim, config.embed_dim)
        block = nn.TransformerEncoderLayer(
            d_model=config.embed_dim,
            nhead=config.num_heads,
            dim_feedforward=int(config.embed_dim * config.mlp_ratio),
            dropout=config.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            block,
            num_layers=config.num_layers,
            norm=nn.LayerNorm(config.embed_dim),
            enable_nested_tensor=False,
        )
        self.head = nn.Sequential(
            nn.Linear(config.embed_dim, config.embed_dim),
            nn.GELU(),
            nn.Dropout(config.dropout),
            nn.Linear(config.embed_dim, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Score a T×D feature tensor; returns a length-T tensor in (0, 1)."""
        num_frames = features.shape[0]
        if num_frames > self.config.max_frames:
            raise SequenceTooLongError(
                f'{num_frames} frames exceed max_frames={self.config.max_frames}; '
                'chunk the video or sample it at a lower fps'
            )
        tokens = self.embed(features)
        tokens = tokens + sinusoidal_encoding(
            num_frames, self.config.embed_dim, dtype=tokens.dtype, device=tokens.device
        )
        hidden = self.encoder(tokens.unsqueeze(0)).squeeze(0)
        return torch.sigmoid(self.head(hidden).squeeze(-1))


def summarize(model: FrameSummarizer, features: FrameFeatures) -> SummaryScores:
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dtype = next(model.parameters()).dtype
            scores = model(features.as_tensor(dtype=dtype))
    finally:
        model.train(was_training)
    return validate(SummaryScores(features.video_id, scores.float().numpy()))


def weight_features(features, scores) -> torch.Tensor:
    """Scale row t of the features by score t."""
    if isinstance(features, FrameFeatures):
        features = features.as_tensor()
    if isinstance(scores, SummaryScores):
        scores = torch.tensor(scores.scores)
    check_same_length('features', features, 'scores', scores)
    return features * scores.unsqueeze(-1)
