"""Call counters used to prove which code paths a stage touched."""
from collections import Counter
from contextlib import contextmanager

CALLS: Counter = Counter()


def count(name: str) -> None:
    CALLS[name] += 1


@contextmanager
def recording():
    """Yield a Counter holding only the calls made inside the block."""
    before = CALLS.copy()
    delta = Counter()
    try:
        yield delta
    finally:
        now = CALLS.copy()
        now.subtract(before)
        delta.update({k: v for k, v in now.items() if v})
