"""Fan independent trajectory tasks out to worker processes.

Results come back in task order, so merges depend only on the task list and
never on which worker finished first.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

WORKERS_ENV = "SRB_GRAD_THREADS"


def default_workers() -> int:
    """Worker count from SRB_GRAD_THREADS, else 1"""
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        if raw:
            logger.warning(f"Ignoring non-integer {WORKERS_ENV}={raw!r}")
        return 1


def run_tasks(fn: Callable[..., T], tasks: Sequence[tuple], workers: Optional[int] = None) -> List[T]:
    """Apply fn(*task) for every task; fn and its arguments must be picklable"""
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, len(tasks)) if tasks else 1
    if workers <= 1:
        return [fn(*task) for task in tasks]
    logger.info(f"Running {len(tasks)} tasks on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *task) for task in tasks]
        return [f.result() for f in futures]
