"""
Django settings for the ddsd project.

The project has no database and no web surface; Django provides the
management commands, the app registry and the logging configuration.

Local overrides live in ddsd/config.ini (see the DEFAULT section there).
"""

import os
import configparser

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

config = configparser.ConfigParser(interpolation = None)
config.read(os.path.join(BASE_DIR, "ddsd", "config.ini"))
defaults = config["DEFAULT"]

SECRET_KEY = defaults.get("SecretKey", "ddsd-local-batch-runs")

DEBUG = False

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    "ddsd",
    "benchmark",
    "machine_learning",
]

DATABASES = {}

# Run defaults

SEED = defaults.getint("Seed", fallback = None)
DATA_DIR = defaults.get("DataDir", "data")
RUNS_DIR = defaults.get("RunsDir", "runs")
LOG_LEVEL = os.environ.get(
    "DDSD_LOG_LEVEL", defaults.get("LogLevel", "INFO"),
).upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "loggers": {
        "ddsd": {"handlers": ["console"], "level": LOG_LEVEL},
        "benchmark": {"handlers": ["console"], "level": LOG_LEVEL},
        "machine_learning": {"handlers": ["console"], "level": LOG_LEVEL},
    },
}

# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_TZ = True
