"""Single-machine task parallelism.

Two layers mirror the distributed/shared split of the parallel DDSG scheme:
coarse tasks are component functions of one expansion order, statically
balanced over worker groups; fine tasks are chunks of grid points inside one
refinement level. Everything runs on a thread pool; the numerical kernels
release the GIL.

Submitted callables must not mutate shared state. Results always come back in
task order, so any reduction done by the caller is fixed-order and the output
does not depend on the worker count.
"""

from __future__ import annotations

import heapq
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

WORKERS_ENV = "DDSG_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


class TaskError(RuntimeError):
    """One or more tasks of a :func:`parallel_map` call raised."""

    def __init__(self, failures):
        self.failures = failures  # list of (task_id, exception), ascending task id
        tid, exc = failures[0]
        super().__init__(f"{len(failures)} task(s) failed; first failure in task {tid}: {exc!r}")
        self.__cause__ = exc


def parallel_map(tasks: Sequence, worker_count: int, f: Callable):
    """Apply ``f`` to every task; results are returned in task order.

    With ``worker_count == 1`` this is a plain loop in the calling thread.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    tasks = list(tasks)
    results = [None] * len(tasks)
    failures = []
    if worker_count == 1 or len(tasks) <= 1:
        for i, t in enumerate(tasks):
            try:
                results[i] = f(t)
            except Exception as exc:  # aggregated below
                failures.append((i, exc))
    else:
        with ThreadPoolExecutor(max_workers=min(worker_count, len(tasks))) as pool:
            futures = [pool.submit(f, t) for t in tasks]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    failures.append((i, exc))
    if failures:
        raise TaskError(failures)
    return results


def load_balance(component_costs: Sequence[float], worker_count: int) -> list[list[int]]:
    """Static longest-processing-time assignment of tasks to workers.

    Returns one list of task ids per worker (some may be empty). Ties are
    broken by task id and worker id, so the assignment is deterministic.
    """
    if worker_count < 1:
        raise ValueError("worker_count must be >= 1")
    order = sorted(range(len(component_costs)), key=lambda i: (-component_costs[i], i))
    heap = [(0.0, w) for w in range(worker_count)]
    groups: list[list[int]] = [[] for _ in range(worker_count)]
    for i in order:
        load, w = heapq.heappop(heap)
        groups[w].append(i)
        heapq.heappush(heap, (load + component_costs[i], w))
    for g in groups:
        g.sort()
    return groups


def group_loads(component_costs, groups):
    return [sum(component_costs[i] for i in g) for g in groups]


@dataclass
class TaskPlan:
    """Coarse assignment of component indices to worker groups.

    ``fine_workers`` is the number of threads each group may use for grid
    point batches; it soaks up workers left idle when there are fewer coarse
    tasks than workers.
    """

    worker_count: int
    components: list
    costs: list
    groups: list = field(default_factory=list)
    fine_workers: int = 1

    @classmethod
    def make(cls, components, costs, worker_count):
        groups = load_balance(costs, worker_count)
        busy = max(1, sum(1 for g in groups if g))
        return cls(worker_count=worker_count, components=list(components), costs=list(costs),
                   groups=groups, fine_workers=max(1, worker_count // busy))

    def run(self, build_one: Callable):
        """Run ``build_one(component)`` for every component; results in component order."""
        active = [g for g in self.groups if g]

        def run_group(group):
            return [(i, build_one(self.components[i])) for i in group]

        out = [None] * len(self.components)
        for chunk in parallel_map(active, len(active) if active else 1, run_group):
            for i, res in chunk:
                out[i] = res
        return out
