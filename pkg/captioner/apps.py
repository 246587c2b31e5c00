from django.apps import AppConfig


class CaptionerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'captioner'
    verbose_name = 'Dense video captioner'
