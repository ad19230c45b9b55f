"""Small shared utilities: deterministic parallel mapping and hashing."""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(requested: int | None) -> int:
    """CLI flag wins, then IDLAB_THREADS, then 1."""
    if requested is not None and requested > 0:
        return int(requested)
    env = os.environ.get("IDLAB_THREADS", "")
    if env.strip().isdigit() and int(env) > 0:
        return int(env)
    return 1


def ordered_map(fn, items, workers: int = 1) -> list:
    """Map preserving input order; results are aggregated in submission order
    regardless of completion order, so reductions stay bit-reproducible."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, it) for it in items]
        return [f.result() for f in futures]


def git_blob_hash(data: bytes) -> str:
    """Content hash in git blob style: sha1 over 'blob <len>\\0<data>'."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()
