"""Process-wide call counters for code paths that evaluation must not touch."""

from collections import Counter

counters: Counter = Counter()


def bump(name: str) -> None:
    counters[name] += 1


def snapshot() -> dict[str, int]:
    return dict(counters)
