"""Process-pool map whose results do not depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_threads(threads: int | None) -> int:
    """``None`` or ``<= 0`` means every available core."""
    if threads is None or threads <= 0:
        if hasattr(os, "sched_getaffinity"):
            return len(os.sched_getaffinity(0))
        return os.cpu_count() or 1
    return int(threads)


def _star(fa):
    fn, args = fa
    return fn(*args)


def pmap(fn, arglist, threads: int | None = 1) -> list:
    """``[fn(*a) for a in arglist]``, optionally across processes; output order is input order."""
    arglist = list(arglist)
    n = resolve_threads(threads)
    if n <= 1 or len(arglist) <= 1:
        return [fn(*a) for a in arglist]
    with ProcessPoolExecutor(max_workers=min(n, len(arglist))) as ex:
        return list(ex.map(_star, [(fn, a) for a in arglist]))
