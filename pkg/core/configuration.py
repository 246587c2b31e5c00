"""
Configuration loading for pipeline commands.

The defaults tree lives in ``settings.VIDSUM`` (loaded from
``config/defaults.json``). A run configuration is that tree, with an optional
JSON file merged over it, then ``section.key=value`` overrides, validated
section by section by the Django form each owning app declares.
"""
import copy
import json
import logging
from dataclasses import dataclass, field
from importlib import import_module
from pathlib import Path

from django.conf import settings

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

SECTION_FORMS = {
    'encoder': 'encoders.forms.EncoderForm',
    'dataset': 'dataset_io.forms.DatasetForm',
    'summarizer': 'summarizer.forms.SummarizerConfigForm',
    'captioner': 'captioner.forms.CaptionerConfigForm',
    'prior': 'clip_prior.forms.PriorConfigForm',
    'loss': 'objectives.forms.LossWeightsForm',
    'training': 'training.forms.TrainConfigForm',
    'evaluation': 'evaluation.forms.EvaluationForm',
}


@dataclass(frozen=True)
class RunConfig:
    encoder: object
    dataset: object
    summarizer: object
    captioner: object
    prior: object
    loss: object
    training: object
    evaluation: object
    snapshot: dict = field(repr=False, default_factory=dict)


def _form_class(dotted):
    module_name, class_name = dotted.rsplit('.', 1)
    return getattr(import_module(module_name), class_name)


def _merge(base, update, path=''):
    for key, value in update.items():
        dotted = f'{path}{key}'
        if key not in base:
            raise ConfigurationError({dotted: ['unknown configuration key']})
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError({dotted: ['expected a mapping']})
            _merge(base[key], value, f'{dotted}.')
        else:
            base[key] = value
    return base


def parse_override(text):
    """Parse ``section.key=value``; the value is JSON when it parses as JSON."""
    if '=' not in text:
        raise ConfigurationError({text: ['override must look like section.key=value']})
    path, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    update = value
    for part in reversed(path.strip().split('.')):
        update = {part: update}
    return update


def load_tree(config_file=None, overrides=()):
    tree = copy.deepcopy(settings.VIDSUM)
    if config_file:
        path = Path(config_file)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise ConfigurationError({str(path): ['config file not found']})
        except json.JSONDecodeError as exc:
            raise ConfigurationError({str(path): [f'invalid JSON: {exc}']})
        _merge(tree, data)
    for override in overrides:
        _merge(tree, parse_override(override))
    return tree


def build_section(section, values):
    """Validate one section and return its typed config object."""
    form = _form_class(SECTION_FORMS[section])(data=values)
    if not form.is_valid():
        raise ConfigurationError({
            f'{section}.{name}' if name != '__all__' else section: list(messages)
            for name, messages in form.errors.items()
        })
    return form.to_config()


def load_run_config(config_file=None, overrides=()) -> RunConfig:
    tree = load_tree(config_file, overrides)
    errors = {}
    sections = {}
    for section in SECTION_FORMS:
        try:
            sections[section] = build_section(section, tree[section])
        except ConfigurationError as exc:
            errors.update(exc.errors)
    if errors:
        raise ConfigurationError(errors)
    logger.debug('Loaded run configuration: %s', tree)
    return RunConfig(snapshot=tree, **sections)
