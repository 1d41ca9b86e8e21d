# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled event-loop engine; algorithmic twin of _engine_py.

Ready queues are binary heaps over the packed key priority*n + id, which
orders identically to the reference's (priority, id) tuples because ids are
unique and below n.  Any change here must be mirrored in _engine_py.
"""

import numpy as np

from kvoverlap.pipesim._engine_py import DependencyCycleError


cdef inline void _heap_push(long long[:, ::1] heap, long long[::1] sizes,
                            Py_ssize_t r, long long key) noexcept:
    cdef Py_ssize_t pos = sizes[r]
    cdef Py_ssize_t parent
    cdef long long tmp
    heap[r, pos] = key
    sizes[r] = pos + 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if heap[r, parent] <= heap[r, pos]:
            break
        tmp = heap[r, parent]
        heap[r, parent] = heap[r, pos]
        heap[r, pos] = tmp
        pos = parent


cdef inline long long _heap_pop(long long[:, ::1] heap, long long[::1] sizes,
                                Py_ssize_t r) noexcept:
    cdef long long top = heap[r, 0]
    cdef Py_ssize_t size = sizes[r] - 1
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    cdef long long tmp
    sizes[r] = size
    heap[r, 0] = heap[r, size]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and heap[r, child + 1] < heap[r, child]:
            child += 1
        if heap[r, pos] <= heap[r, child]:
            break
        tmp = heap[r, pos]
        heap[r, pos] = heap[r, child]
        heap[r, child] = tmp
        pos = child
    return top


def run_schedule(resource, duration, priority, dep_indptr, dep_indices, int n_resources):
    """Same contract as _engine_py.run_schedule."""
    cdef long long[::1] res = np.ascontiguousarray(resource, dtype=np.int64)
    cdef double[::1] dur = np.ascontiguousarray(duration, dtype=np.float64)
    cdef long long[::1] prio = np.ascontiguousarray(priority, dtype=np.int64)
    cdef long long[::1] indptr = np.ascontiguousarray(dep_indptr, dtype=np.int64)
    cdef long long[::1] indices = np.ascontiguousarray(dep_indices, dtype=np.int64)

    cdef Py_ssize_t n = res.shape[0]
    start = np.zeros(n, dtype=np.float64)
    end = np.zeros(n, dtype=np.float64)
    if n == 0:
        return start, end

    cdef double[::1] sv = start
    cdef double[::1] ev = end

    cdef long long[::1] indeg = np.empty(n, dtype=np.int64)
    cdef long long[::1] child_ptr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] child_idx = np.empty(indices.shape[0], dtype=np.int64)
    cdef long long[::1] fill = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i, pos, r, c
    cdef long long d

    for i in range(n):
        indeg[i] = indptr[i + 1] - indptr[i]
        for pos in range(indptr[i], indptr[i + 1]):
            child_ptr[indices[pos] + 1] += 1
    for i in range(n):
        child_ptr[i + 1] += child_ptr[i]
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            d = indices[pos]
            child_idx[child_ptr[d] + fill[d]] = i
            fill[d] += 1

    cdef long long[:, ::1] ready = np.empty((n_resources, n), dtype=np.int64)
    cdef long long[::1] ready_size = np.zeros(n_resources, dtype=np.int64)
    cdef long long[::1] running_id = np.full(n_resources, -1, dtype=np.int64)
    cdef double[::1] running_end = np.zeros(n_resources, dtype=np.float64)

    for i in range(n):
        if indeg[i] == 0:
            _heap_push(ready, ready_size, res[i], prio[i] * n + i)

    cdef Py_ssize_t completed = 0
    cdef double t, e
    cdef bint have_t
    cdef long long key

    # initial dispatch at t = 0
    for r in range(n_resources):
        if running_id[r] < 0 and ready_size[r] > 0:
            key = _heap_pop(ready, ready_size, r)
            i = <Py_ssize_t> (key % n)
            sv[i] = 0.0
            e = dur[i]
            ev[i] = e
            running_id[r] = i
            running_end[r] = e

    while True:
        have_t = False
        t = 0.0
        for r in range(n_resources):
            if running_id[r] >= 0 and (not have_t or running_end[r] < t):
                t = running_end[r]
                have_t = True
        if not have_t:
            break
        for r in range(n_resources):
            if running_id[r] >= 0 and running_end[r] == t:
                i = <Py_ssize_t> running_id[r]
                running_id[r] = -1
                completed += 1
                for pos in range(child_ptr[i], child_ptr[i + 1]):
                    c = <Py_ssize_t> child_idx[pos]
                    indeg[c] -= 1
                    if indeg[c] == 0:
                        _heap_push(ready, ready_size, res[c], prio[c] * n + c)
        for r in range(n_resources):
            if running_id[r] < 0 and ready_size[r] > 0:
                key = _heap_pop(ready, ready_size, r)
                i = <Py_ssize_t> (key % n)
                sv[i] = t
                e = t + dur[i]
                ev[i] = e
                running_id[r] = i
                running_end[r] = e

    if completed != n:
        raise DependencyCycleError(
            f"{n - completed} of {n} tasks never became ready"
        )
    return start, end
