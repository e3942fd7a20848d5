import sys
sys.path.insert(0, ".")
from parser.bounds import parse_index

try:
    parse_index("4abc")
except ValueError:
    print("PATCH HOLDS")
    sys.exit(0)
except IndexError:
    print("patch bypassed")
    sys.exit(1)
print("unexpected success")
sys.exit(1)
