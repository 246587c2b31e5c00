"""
Base class for the pipeline management commands.

Adds ``--config`` / ``--set`` handling and maps pipeline failures onto exit
codes: 2 for usage and input errors, 1 for runtime failures.
"""
import logging

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from .configuration import load_run_config
from .exceptions import (
    AnnotationFormatError,
    VidsumError,
    ConfigurationError,
    EncoderError,
    MissingAnnotationError,
    MissingVideoError,
    UnknownVideoError,
)

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2

INPUT_ERRORS = (
    ConfigurationError,
    AnnotationFormatError,
    UnknownVideoError,
    MissingAnnotationError,
    MissingVideoError,
    EncoderError,
    ValidationError,
    FileNotFoundError,
)


class PipelineCommand(BaseCommand):

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            help='JSON configuration tree merged over config/defaults.json',
        )
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            dest='overrides',
            metavar='SECTION.KEY=VALUE',
            help='Override one configuration value; may be repeated',
        )
        self.add_pipeline_arguments(parser)

    def add_pipeline_arguments(self, parser):
        pass

    def load_config(self, options, extra_overrides=()):
        overrides = list(options.get('overrides') or []) + list(extra_overrides)
        return load_run_config(options.get('config'), overrides)

    def run(self, options):
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            self.run(options)
        except INPUT_ERRORS as exc:
            logger.error('%s failed: %s', self.command_name, exc)
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        except VidsumError as exc:
            logger.error('%s failed: %s', self.command_name, exc)
            raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))

    def warn(self, message):
        self.stdout.write(self.style.WARNING(message))
