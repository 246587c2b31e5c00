from django.apps import AppConfig


class DatasetIoConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'dataset_io'
    verbose_name = 'Dataset ingestion and feature storage'
