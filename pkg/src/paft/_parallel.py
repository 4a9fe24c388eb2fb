"""Deterministic task fan-out for resampling and replication loops.

Worker count resolution: explicit argument, else the PAFT_THREADS
environment variable, else one worker per CPU.  Results always come back
in task order, so parallel and serial execution produce identical
output.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["resolve_workers", "map_tasks"]


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get("PAFT_THREADS", "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"PAFT_THREADS must be an integer, got {env!r}") from None
        else:
            workers = 0
    if workers <= 0:
        workers = os.cpu_count() or 1
    return max(1, int(workers))


def map_tasks(fn, tasks, workers: int | None = None) -> list:
    """Apply ``fn`` to every task, preserving order.

    Runs inline for a single worker; otherwise uses a process pool, so
    ``fn`` and the tasks must be picklable.
    """
    tasks = list(tasks)
    w = resolve_workers(workers)
    if w == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * w))
    with ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))
