"""Order-preserving thread map used for frame-level parallelism."""

from concurrent.futures import ThreadPoolExecutor


def map_ordered(func, items, n_jobs=1):
    """Apply ``func`` to ``items``; results come back in input order."""
    items = list(items)
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [func(i) for i in items]
    with ThreadPoolExecutor(max_workers=int(n_jobs)) as pool:
        return list(pool.map(func, items))
