import hashlib
import json
import random
from pathlib import Path

import numpy as np
import torch
from django.core.exceptions import SuspiciousFileOperation
from django.utils.text import get_valid_filename


def seed_everything(seed: int) -> np.random.Generator:
    """
    Seed every random source used by the pipeline and return a numpy
    generator for data ordering.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def get_video_file_path(root, video_id: str, suffix: str) -> Path:
    """
    Generate a filesystem-safe file path for a video id.
    """
    try:
        name = get_valid_filename(video_id)
    except SuspiciousFileOperation:
        name = hashlib.sha1(video_id.encode('utf-8')).hexdigest()[:12]
    return Path(root) / f'{name}{suffix}'


def write_json(path, data, indent=2):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=indent, sort_keys=True) + '\n', encoding='utf-8')


def write_json_lines(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + '\n')


def read_json_lines(path):
    with open(path, encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]
