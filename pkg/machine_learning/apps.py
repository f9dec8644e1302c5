from django.apps import AppConfig


class MachineLearningConfig(AppConfig):
    name = "machine_learning"
