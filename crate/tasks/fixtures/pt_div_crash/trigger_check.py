import sys
sys.path.insert(0, ".")
from calc.ratio import safe_ratio

try:
    safe_ratio(1, 0)
except ZeroDivisionError:
    print("TRIGGERED")
    sys.exit(0)
print("not triggered")
sys.exit(1)
