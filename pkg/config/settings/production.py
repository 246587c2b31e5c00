"""
Production settings for the vidsum project.
"""
from decouple import config

from .base import *

DEBUG = False

# Prior cache shared between training workers
CACHES['priors'] = {
    'BACKEND': 'django.core.cache.backends.redis.RedisCache',
    'LOCATION': config('REDIS_URL', default='redis://127.0.0.1:6379/1'),
    'TIMEOUT': None,
}

# Logging for production
LOGGING['handlers']['file'] = {
    'class': 'logging.handlers.RotatingFileHandler',
    'filename': BASE_DIR / 'logs' / 'vidsum.log',
    'maxBytes': 1024*1024*10,  # 10MB
    'backupCount': 5,
    'formatter': 'verbose',
}

LOGGING['root']['handlers'].append('file')
for _logger in LOGGING['loggers'].values():
    _logger['handlers'].append('file')

SENTRY_DSN = config('SENTRY_DSN', default='')
if SENTRY_DSN:
    import sentry_sdk
    from sentry_sdk.integrations.django import DjangoIntegration

    sentry_sdk.init(
        dsn=SENTRY_DSN,
        integrations=[DjangoIntegration()],
        release=f"vidsum@{config('VIDSUM_RELEASE', default='1.0.0')}",
    )
