"""
Set-prediction dense video captioner.

A transformer encoder reads the score-weighted frame features, a decoder
turns N learned event queries into proposals, and four heads read the
queries: localization (center, width), confidence, event count, and an
autoregressive caption head attending over the query plus encoded frames.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional

import torch
from torch import nn

from core.domain import BOS_INDEX, CaptionerOutput, validate
from summarizer.model import sinusoidal_encoding

logger = logging.getLogger(__name__)

MIN_WIDTH = 1e-4


@dataclass(frozen=True)
class CaptionerConfig:
    num_queries: int = 10
    max_caption_len: int = 20
    embed_dim: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    num_heads: int = 4
    dropout: float = 0.1
    max_event_count: Optional[int] = None
    match_giou_weight: float = 4.0
    match_cls_weight: float = 2.0
    confidence_threshold: float = 0.5
    vocab_min_count: int = 1

    @property
    def event_count_max(self) -> int:
        return self.num_queries if self.max_event_count is None else self.max_event_count


class DenseCaptioner(nn.Module):

    def __init__(self, config: CaptionerConfig, input_dim: int, vocab_size: int):
        super().__init__()
        self.config = config
        self.input_dim = input_dim
        self.vocab_size = vocab_size
        width = config.embed_dim

        def encoder_block():
            return nn.TransformerEncoderLayer(
                width, config.num_heads, 4 * width, config.dropout, batch_first=True, norm_first=True,
            )

        def decoder_block():
            return nn.TransformerDecoderLayer(
                width, config.num_heads, 4 * width, config.dropout, batch_first=True, norm_first=True,
            )

        self.embed = nn.Linear(input_dim, width)
        self.encoder = nn.TransformerEncoder(
            encoder_block(), config.enc_layers, norm=nn.LayerNorm(width), enable_nested_tensor=False,
        )
        self.queries = nn.Embedding(config.num_queries, width)
        self.decoder = nn.TransformerDecoder(decoder_block(), config.dec_layers, norm=nn.LayerNorm(width))

        self.localization = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, 2))
        self.confidence = nn.Linear(width, 1)
        self.counter = nn.Linear(width, config.event_count_max + 1)

        self.token_embed = nn.Embedding(vocab_size, width)
        self.caption_decoder = decoder_block()
        self.caption_norm = nn.LayerNorm(width)
        self.caption_out = nn.Linear(width, vocab_size)

    def propose(self, weighted: torch.Tensor) -> CaptionerOutput:
        """Run encoder, decoder and the set heads; caption logits are left empty."""
        num_frames = weighted.shape[0]
        tokens = self.embed(weighted)
        tokens = tokens + sinusoidal_encoding(
            num_frames, self.config.embed_dim, dtype=tokens.dtype, device=tokens.device
        )
        memory = self.encoder(tokens.unsqueeze(0))
        queries = self.queries.weight.to(memory.dtype).unsqueeze(0)
        hidden = self.decoder(queries, memory).squeeze(0)

        center_width = torch.sigmoid(self.localization(hidden))
        segments = torch.stack(
            [center_width[:, 0], center_width[:, 1].clamp(min=MIN_WIDTH)], dim=-1
        )
        empty = hidden.new_zeros(self.config.num_queries, 0, self.vocab_size)
        return CaptionerOutput(
            segments=segments,
            confidence_logits=self.confidence(hidden).squeeze(-1),
            caption_logits=empty,
            event_count_logits=self.counter(hidden.max(dim=0).values),
            hidden=hidden,
            memory=memory.squeeze(0),
        )

    def _context(self, output: CaptionerOutput):
        num_queries = len(output)
        frames = output.memory.unsqueeze(0).expand(num_queries, -1, -1)
        return torch.cat([output.hidden.unsqueeze(1), frames], dim=1)

    def _caption_step(self, context, input_ids):
        length = input_ids.shape[1]
        causal = nn.Transformer.generate_square_subsequent_mask(length, device=input_ids.device)
        target = self.token_embed(input_ids)
        target = target + sinusoidal_encoding(
            length, self.config.embed_dim, dtype=target.dtype, device=target.device
        )
        decoded = self.caption_decoder(target, context, tgt_mask=causal.to(target.dtype), tgt_is_causal=True)
        return self.caption_out(self.caption_norm(decoded))

    def describe(self, output: CaptionerOutput, input_ids: torch.Tensor) -> CaptionerOutput:
        """Teacher-forced caption logits for N×L ``input_ids``."""
        logits = self._caption_step(self._context(output), input_ids)
        return replace(output, caption_logits=logits)

    def greedy(self, output: CaptionerOutput) -> CaptionerOutput:
        context = self._context(output)
        num_queries = len(output)
        input_ids = torch.full(
            (num_queries, 1), BOS_INDEX, dtype=torch.long, device=context.device
        )
        for _ in range(self.config.max_caption_len):
            logits = self._caption_step(context, input_ids)
            input_ids = torch.cat([input_ids, logits[:, -1].argmax(dim=-1, keepdim=True)], dim=1)
        return replace(output, caption_logits=logits)

    def forward(self, weighted: torch.Tensor, input_ids: Optional[torch.Tensor] = None) -> CaptionerOutput:
        output = self.propose(weighted)
        if input_ids is None:
            output = self.greedy(output)
        else:
            output = self.describe(output, input_ids)
        return validate(output)


def caption_forward(model: DenseCaptioner, weighted: torch.Tensor) -> CaptionerOutput:
    """Greedy set prediction for one video's weighted features."""
    return model(weighted)
