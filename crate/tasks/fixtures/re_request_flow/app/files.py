def open_user_file(base, name):
    return open(base + "/" + name)
