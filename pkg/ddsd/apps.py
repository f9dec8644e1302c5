from django.apps import AppConfig


class DdsdConfig(AppConfig):
    name = "ddsd"
