import os
import sys


def run_command(argv) -> int:
    """ Run `manage.py ddsd <argv>` and return its exit status.

    Usage errors exit with status 2 and other failures with status 1, each
    after printing the message to stderr.
    """
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "ddsd.settings")
    from django.core.management import execute_from_command_line

    try:
        execute_from_command_line(["manage.py", "ddsd"] + list(argv))
    except SystemExit as e:
        if e.code is None:
            return 0
        if isinstance(e.code, int):
            return e.code
        sys.stderr.write("{}\n".format(e.code))
        return 1
    return 0
