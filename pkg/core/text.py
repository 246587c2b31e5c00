import re

_PUNCTUATION = re.compile(r"[^\w\s]", flags=re.UNICODE)


def tokenize(sentence: str) -> tuple[str, ...]:
    """Lowercase, strip punctuation and split on whitespace."""
    return tuple(_PUNCTUATION.sub(' ', sentence.lower()).split())


def detokenize(tokens) -> str:
    return ' '.join(tokens)
