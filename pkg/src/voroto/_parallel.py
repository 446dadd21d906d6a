import os


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("VOROTO_THREADS")
        threads = int(env) if env else 0
    return threads if threads > 0 else (os.cpu_count() or 1)


def ordered_map(fn, items, threads: int | None = 1, chunksize: int = 8):
    """``map`` in input order, fanned out over ``threads`` worker processes."""
    threads = resolve_threads(threads)
    if threads == 1:
        yield from map(fn, items)
        return
    import multiprocessing as mp

    with mp.get_context("fork").Pool(threads) as pool:
        yield from pool.imap(fn, items, chunksize=chunksize)
