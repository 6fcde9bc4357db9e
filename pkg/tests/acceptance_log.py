"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS = []


def check(label, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip()
    RESULTS.append(line)
    print(line)
    assert ok, line
