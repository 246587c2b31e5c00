from django.apps import AppConfig


class SummarizerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'summarizer'
    verbose_name = 'Frame importance summarizer'
