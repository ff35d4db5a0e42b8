"""Deterministic parallel map over independent work items.

Results are returned in input order regardless of scheduling, so output
is bit-identical across worker counts.  The worker count defaults to the
``BYPASSDID_WORKERS`` environment variable, falling back to 1.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_WORKERS = "BYPASSDID_WORKERS"


def resolve_workers(n_jobs: int | None = None) -> int:
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get(ENV_WORKERS, "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], n_jobs: int | None = None) -> list[R]:
    items = list(items)
    workers = resolve_workers(n_jobs)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=workers, backend="loky")(delayed(fn)(item) for item in items)
