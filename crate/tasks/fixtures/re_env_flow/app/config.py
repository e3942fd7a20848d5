import os


def load_template_path():
    return os.environ.get("TEMPLATE_PATH", "default.tmpl")


def render():
    path = load_template_path()
    with open(path) as fh:
        return fh.read()
