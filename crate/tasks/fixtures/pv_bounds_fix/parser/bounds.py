def parse_index(data):
    n = len(data)
    i = int(data[0])
    if i < n:
        return data[i]
    raise ValueError("index out of range")
