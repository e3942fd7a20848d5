import os

BASE = "/srv/app/data"


def open_user_file(base, name):
    # Joins the user-supplied name onto the base directory with plain
    # string concatenation.
    return open(base + "/" + name)


def list_user_files(base):
    return os.listdir(base)
