"""Collects one pass/fail line per acceptance criterion for the run summary."""
RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    return ok
