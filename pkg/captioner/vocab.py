"""
Caption vocabulary. Reserved tokens occupy indices 0-3 in the order
BOS, EOS, PAD, UNK; the remaining tokens follow by descending frequency.
"""
import json
import logging
from collections import Counter
from pathlib import Path

from core.domain import (
    BOS_INDEX,
    EOS_INDEX,
    PAD_INDEX,
    SPECIAL_TOKENS,
    UNK_INDEX,
)
from core.exceptions import CheckpointError

logger = logging.getLogger(__name__)


class Vocabulary:

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f'vocabulary must start with {SPECIAL_TOKENS}')
        if len(set(tokens)) != len(tokens):
            raise ValueError('vocabulary holds duplicate tokens')
        self.tokens = tokens
        self.index = {token: i for i, token in enumerate(tokens)}

    @classmethod
    def build(cls, annotations, min_count=1):
        counts = Counter(
            token
            for annotation in annotations
            for event in annotation.events
            for token in event.sentence
        )
        words = sorted(
            (token for token, count in counts.items() if count >= min_count and token not in SPECIAL_TOKENS),
            key=lambda token: (-counts[token], token),
        )
        logger.info('Built vocabulary of %d words from %d annotations', len(words), len(annotations))
        return cls(list(SPECIAL_TOKENS) + words)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, token):
        if isinstance(token, int):
            return token if 0 <= token < len(self) else UNK_INDEX
        return self.index.get(token, UNK_INDEX)

    def input_ids(self, sentence, max_len):
        """Teacher-forcing inputs: BOS then the sentence, padded to ``max_len``."""
        ids = [BOS_INDEX] + [self.lookup(token) for token in sentence]
        ids = ids[:max_len]
        return ids + [PAD_INDEX] * (max_len - len(ids))

    def target_ids(self, sentence, max_len):
        """Targets aligned with ``input_ids``: the sentence then EOS, padded."""
        ids = [self.lookup(token) for token in sentence] + [EOS_INDEX]
        ids = ids[:max_len]
        return ids + [PAD_INDEX] * (max_len - len(ids))

    def decode(self, ids):
        words = []
        for position, token_id in enumerate(int(i) for i in ids):
            if token_id == EOS_INDEX:
                break
            if token_id == PAD_INDEX or (token_id == BOS_INDEX and position == 0):
                continue
            words.append(self.tokens[token_id] if token_id < len(self) else self.tokens[UNK_INDEX])
        return tuple(words)

    def to_dict(self):
        return {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def from_dict(cls, mapping):
        ordered = sorted(mapping.items(), key=lambda item: item[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise CheckpointError('vocabulary indices are not contiguous from 0')
        return cls([token for token, _ in ordered])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + '\n', encoding='utf-8')

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))
