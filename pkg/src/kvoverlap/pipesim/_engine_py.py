"""Pure-Python event-loop engine (reference implementation).

`_engine.pyx` is the compiled twin; both implement the identical algorithm
and must produce bit-identical schedules.  Keep any behavioral change in
sync between the two files.
"""

from __future__ import annotations

import heapq

import numpy as np


class DependencyCycleError(ValueError):
    """Some tasks never became ready; the dependency graph has a cycle."""


def run_schedule(resource, duration, priority, dep_indptr, dep_indices, n_resources):
    """Non-preemptive list scheduling onto exclusive resources.

    Whenever a resource is idle, the ready task with the smallest
    (priority, id) pair starts on it immediately.  Returns (start, end)
    float64 arrays indexed by task id.
    """
    n = len(resource)
    start = np.zeros(n, dtype=np.float64)
    end = np.zeros(n, dtype=np.float64)
    if n == 0:
        return start, end

    res = np.asarray(resource, dtype=np.int64).tolist()
    dur = np.asarray(duration, dtype=np.float64).tolist()
    prio = np.asarray(priority, dtype=np.int64).tolist()
    indptr = np.asarray(dep_indptr, dtype=np.int64).tolist()
    indices = np.asarray(dep_indices, dtype=np.int64).tolist()

    indeg = [indptr[i + 1] - indptr[i] for i in range(n)]
    children: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            children[indices[pos]].append(i)

    ready: list[list[tuple[int, int]]] = [[] for _ in range(n_resources)]
    for i in range(n):
        if indeg[i] == 0:
            heapq.heappush(ready[res[i]], (prio[i], i))

    running_id = [-1] * n_resources
    running_end = [0.0] * n_resources
    sv = [0.0] * n
    ev = [0.0] * n
    completed = 0

    def dispatch(now: float) -> None:
        for r in range(n_resources):
            if running_id[r] < 0 and ready[r]:
                _, i = heapq.heappop(ready[r])
                sv[i] = now
                e = now + dur[i]
                ev[i] = e
                running_id[r] = i
                running_end[r] = e

    dispatch(0.0)
    while True:
        t = None
        for r in range(n_resources):
            if running_id[r] >= 0 and (t is None or running_end[r] < t):
                t = running_end[r]
        if t is None:
            break
        # complete every resource finishing at t before dispatching again,
        # so simultaneous completions see a consistent ready set
        for r in range(n_resources):
            if running_id[r] >= 0 and running_end[r] == t:
                i = running_id[r]
                running_id[r] = -1
                completed += 1
                for c in children[i]:
                    indeg[c] -= 1
                    if indeg[c] == 0:
                        heapq.heappush(ready[res[c]], (prio[c], c))
        dispatch(t)

    if completed != n:
        raise DependencyCycleError(f"{n - completed} of {n} tasks never became ready")
    start[:] = sv
    end[:] = ev
    return start, end
