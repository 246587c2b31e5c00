import logging
from pathlib import Path

from django.db import DatabaseError

from config import __version__
from .models import RunManifest
from .utils import write_json

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = 'manifest.json'


def record_run(command, output_dir, config=None, seed=None, label_set_hash='', checkpoint_hashes=None):
    """
    Persist a RunManifest to the run registry and as ``manifest.json`` in the
    output directory.
    """
    manifest = RunManifest(
        command=command,
        output_dir=str(Path(output_dir).resolve()),
        seed=seed,
        config_snapshot=config or {},
        label_set_hash=label_set_hash or '',
        checkpoint_hashes=checkpoint_hashes or {},
        tool_version=__version__,
    )
    try:
        manifest.save()
    except DatabaseError as exc:
        logger.warning('Run registry unavailable, manifest kept on disk only: %s', exc)
    write_json(Path(output_dir) / MANIFEST_FILENAME, manifest.as_dict())
    return manifest
