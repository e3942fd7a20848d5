import os

BASE = "/srv/app/data"


def open_user_file(base, name):
    safe = os.path.normpath(os.path.join(base, name))
    if not safe.startswith(base + os.sep):
        raise ValueError("path escapes base directory")
    return safe
