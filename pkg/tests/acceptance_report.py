"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES = {}


def record(n, ok, detail):
    LINES[n] = "criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail)
    return ok
