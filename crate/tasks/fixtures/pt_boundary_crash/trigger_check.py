import sys
sys.path.insert(0, ".")
from parser.bounds import parse_index

try:
    parse_index("4abc")
except IndexError:
    print("TRIGGERED")
    sys.exit(0)
print("not triggered")
sys.exit(1)
