"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS = {}


def record(number, ok, detail):
    line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return ok
