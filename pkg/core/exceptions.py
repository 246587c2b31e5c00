"""
Exception hierarchy shared by every vidsum app.

Invariant violations on domain objects raise Django's ``ValidationError``;
everything else raises one of the classes below.
"""


class VidsumError(Exception):
    """Base class for pipeline failures."""


class ConfigurationError(VidsumError):
    """Raised when a configuration tree fails validation.

    ``errors`` maps dotted field paths (``training.learning_rate``) to
    lists of messages.
    """

    def __init__(self, errors):
        self.errors = dict(errors)
        lines = [f'{path}: {"; ".join(msgs)}' for path, msgs in sorted(self.errors.items())]
        super().__init__('Invalid configuration:\n  ' + '\n  '.join(lines))


class AnnotationFormatError(VidsumError):
    """Malformed annotation file or record."""


class UnknownVideoError(VidsumError, KeyError):
    """Video id not present in a feature store."""

    def __str__(self):
        return Exception.__str__(self)


class ChecksumError(VidsumError):
    """Stored payload does not match its checksum."""


class CheckpointError(VidsumError):
    """Checkpoint cannot be read or fails its content hash."""


class ConfigMismatchError(VidsumError):
    """Persisted state was produced under a different model configuration."""


class SequenceTooLongError(VidsumError):
    """Input has more frames than the model accepts."""


class NonFiniteLossError(VidsumError):
    """A training step produced NaN or Inf.

    ``snapshot`` carries the video id and component values for diagnosis.
    """

    def __init__(self, snapshot):
        self.snapshot = dict(snapshot)
        super().__init__(f'Non-finite loss: {self.snapshot}')


class MissingAnnotationError(VidsumError):
    """A training mode was started without the annotations it needs."""


class MissingVideoError(VidsumError):
    """Evaluation inputs do not cover the same set of videos."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f'Missing videos: {", ".join(self.missing)}')


class EncoderError(VidsumError):
    """Encoder input does not match the handle."""


class LengthMismatchError(VidsumError, ValueError):
    """Two per-frame vectors or matrices disagree on T."""


def check_same_length(name_a, a, name_b, b):
    if len(a) != len(b):
        raise LengthMismatchError(f'{name_a} has length {len(a)}, {name_b} has length {len(b)}')
