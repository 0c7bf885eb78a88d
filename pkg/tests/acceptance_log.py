"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    RESULTS[criterion] = (bool(ok), detail)
    print(f"CRITERION {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
