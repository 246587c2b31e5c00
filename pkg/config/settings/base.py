"""
Base settings for the vidsum project.
"""
import json
from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = config('SECRET_KEY', default='django-insecure-vidsum-batch-only')

# Application definition
DJANGO_APPS = [
    'django.contrib.contenttypes',
]

LOCAL_APPS = [
    'core.apps.CoreConfig',
    'dataset_io.apps.DatasetIoConfig',
    'encoders.apps.EncodersConfig',
    'summarizer.apps.SummarizerConfig',
    'captioner.apps.CaptionerConfig',
    'clip_prior.apps.ClipPriorConfig',
    'objectives.apps.ObjectivesConfig',
    'training.apps.TrainingConfig',
    'evaluation.apps.EvaluationConfig',
]

INSTALLED_APPS = DJANGO_APPS + LOCAL_APPS

# Database (run registry)
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.postgresql',
        'NAME': config('DATABASE_NAME', default='vidsum'),
        'USER': config('DATABASE_USER', default='postgres'),
        'PASSWORD': config('DATABASE_PASSWORD', default=''),
        'HOST': config('DATABASE_HOST', default='localhost'),
        'PORT': config('DATABASE_PORT', default='5432'),
    }
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Prior cache
CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
    },
    'priors': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
        'LOCATION': 'vidsum-priors',
        'TIMEOUT': None,
    },
}

# Declarative defaults for every pipeline stage. Commands merge --config and
# --set overrides on top of this tree.
VIDSUM_DEFAULTS_FILE = BASE_DIR / 'config' / 'defaults.json'
VIDSUM = json.loads(VIDSUM_DEFAULTS_FILE.read_text(encoding='utf-8'))

VIDSUM['encoder']['name'] = config('VIDSUM_ENCODER', default=VIDSUM['encoder']['name'])
VIDSUM['encoder']['weights_path'] = config(
    'VIDSUM_ENCODER_WEIGHTS', default=VIDSUM['encoder']['weights_path']
)

VIDSUM_LABELS_FILE = BASE_DIR / 'clip_prior' / 'assets' / 'labels_v1.txt'

# Logging
VIDSUM_LOG_LEVEL = config('VIDSUM_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': config('DJANGO_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
        **{
            app: {
                'handlers': ['console'],
                'level': VIDSUM_LOG_LEVEL,
                'propagate': False,
            }
            for app in (
                'core', 'dataset_io', 'encoders', 'summarizer', 'captioner',
                'clip_prior', 'objectives', 'training', 'evaluation',
            )
        },
    },
}
