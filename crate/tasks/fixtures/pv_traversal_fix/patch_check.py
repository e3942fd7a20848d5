import sys
sys.path.insert(0, ".")
from src.files import open_user_file

try:
    open_user_file("/srv/app/data", "../../etc/passwd")
except ValueError:
    print("PATCH HOLDS")
    sys.exit(0)
print("patch bypassed")
sys.exit(1)
