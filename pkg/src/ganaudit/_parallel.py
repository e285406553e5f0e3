from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, jobs, workers: int = 1) -> list:
    """Ordered map; with ``workers > 1`` jobs run in a process pool.

    Jobs must be independent and carry their own seeds, so the result is the
    same for any worker count.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
