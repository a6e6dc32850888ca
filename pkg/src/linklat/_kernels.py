"""Compiled inner loop of the simulator.

One FIFO single-server queue with room for ``K`` packets (in service
included) is driven by a time-sorted arrival stream.  The loop is an
event-driven simulation with two event types: an arrival, which is dropped
when the system already holds ``K`` packets, and a departure.  A departure
and an arrival at the same instant are processed departure first.

Statistics are accumulated per batch over a measurement window given either
as event indices (``MODE_EVENTS``) or as simulated times (``MODE_TIME``).
"""

import numpy as np
from numba import njit

MODE_EVENTS = 0
MODE_TIME = 1

# columns of the per-batch statistics table
S_TIME = 0
S_AREA = 1
S_EMPTY = 2
S_FULL = 3
S_OFFERED = 4
S_ACCEPTED = 5
S_DROPPED = 6
S_DEPARTED = 7
S_SOJOURN = 8
N_STATS = 9


@njit(cache=True, nogil=True)
def _accumulate_interval(stats, t0, t1, n, K, mode, w0, w1, nb, batch):
    """Add the piece of ``[t0, t1)`` spent with ``n`` packets in the system."""
    if t1 <= t0:
        return
    if mode == MODE_EVENTS:
        if batch < 0:
            return
        dt = t1 - t0
        stats[batch, S_TIME] += dt
        stats[batch, S_AREA] += n * dt
        if n == 0:
            stats[batch, S_EMPTY] += dt
        elif n == K:
            stats[batch, S_FULL] += dt
        return
    a = max(t0, w0)
    b = min(t1, w1)
    if b <= a:
        return
    width = (w1 - w0) / nb
    while a < b:
        k = min(int((a - w0) / width), nb - 1)
        edge = w1 if k == nb - 1 else w0 + (k + 1) * width
        while edge <= a and k < nb - 1:
            # a sits on a rounded batch edge
            k += 1
            edge = w1 if k == nb - 1 else w0 + (k + 1) * width
        c = min(b, edge)
        dt = c - a
        stats[k, S_TIME] += dt
        stats[k, S_AREA] += n * dt
        if n == 0:
            stats[k, S_EMPTY] += dt
        elif n == K:
            stats[k, S_FULL] += dt
        a = c


@njit(cache=True, nogil=True)
def _event_batch(mode, count, t, w0, w1, nb):
    """Batch index of the event numbered ``count`` (1-based) at time ``t``,
    or -1 when it lies outside the measurement window."""
    if mode == MODE_EVENTS:
        if count <= w0 or count > w1:
            return -1
        k = int((count - w0 - 1) * nb // (w1 - w0))
        return min(k, nb - 1)
    if t < w0 or t >= w1:
        return -1
    k = int((t - w0) / (w1 - w0) * nb)
    return min(k, nb - 1)


@njit(cache=True, nogil=True)
def fifo_sweep(arrivals, services, K, mode, w0, w1, nb):
    """Simulate the queue.

    Returns ``(departures, stats, info)`` where ``departures[i]`` is the
    departure time of arrival ``i`` (NaN when dropped or never reached),
    ``stats`` is the ``(nb, N_STATS)`` batch table and ``info`` holds
    ``[events, window_start_time, window_end_time, n_at_start, n_at_end]``.
    """
    n_arr = arrivals.shape[0]
    dep = np.full(n_arr, np.nan)
    stats = np.zeros((nb, N_STATS))
    info = np.zeros(5)
    order = np.empty(n_arr, dtype=np.int64)  # accepted arrivals, FIFO order
    head = 0
    tail = 0
    last_dep = -np.inf
    t_prev = 0.0
    count = 0
    stop = False
    started = False
    if mode == MODE_TIME:
        info[1] = w0
        info[2] = w1
    i = 0
    while True:
        # next event: the earliest pending departure unless an arrival
        # strictly precedes it
        has_dep = head < tail
        has_arr = i < n_arr
        if not has_dep and not has_arr:
            break
        take_dep = has_dep and (not has_arr or dep[order[head]] <= arrivals[i])
        if take_dep:
            t = dep[order[head]]
        else:
            t = arrivals[i]
        n = tail - head
        count += 1
        if mode == MODE_EVENTS:
            batch = _event_batch(mode, count, t, w0, w1, nb)
            if count == w0 + 1:
                info[1] = t_prev
                info[3] = n
                started = True
            _accumulate_interval(stats, t_prev, t, n, K, mode, w0, w1, nb, batch)
        else:
            if not started and t >= w0:
                started = True
                info[3] = n
            _accumulate_interval(stats, t_prev, t, n, K, mode, w0, w1, nb, -1)
            batch = _event_batch(mode, count, t, w0, w1, nb)
            if t >= w1 and not stop:
                stop = True
                info[4] = n
        if take_dep:
            j = order[head]
            head += 1
            if batch >= 0:
                stats[batch, S_DEPARTED] += 1
                stats[batch, S_SOJOURN] += t - arrivals[j]
        else:
            if batch >= 0:
                stats[batch, S_OFFERED] += 1
            if n >= K:
                if batch >= 0:
                    stats[batch, S_DROPPED] += 1
            else:
                start = max(t, last_dep)
                last_dep = start + services[i]
                dep[i] = last_dep
                order[tail] = i
                tail += 1
                if batch >= 0:
                    stats[batch, S_ACCEPTED] += 1
            i += 1
        t_prev = t
        if mode == MODE_EVENTS and count >= w1:
            info[2] = t
            info[4] = tail - head
            break
    if mode == MODE_TIME and not stop:
        # the system emptied before the window closed
        _accumulate_interval(stats, t_prev, w1, 0, K, mode, w0, w1, nb, -1)
        if not started:
            info[3] = 0
        info[4] = 0
    info[0] = count
    return dep, stats, info
