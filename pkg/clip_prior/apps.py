from django.apps import AppConfig


class ClipPriorConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'clip_prior'
    verbose_name = 'CLIP prior generator'
