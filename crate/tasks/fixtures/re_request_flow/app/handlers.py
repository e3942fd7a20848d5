from app.files import open_user_file


def handle_download(request):
    name = request.params.get("name", "")
    return open_user_file("/srv/app/data", name)


def handle_health(request):
    return "ok"
