"""FIFO push-relabel max-flow on float capacities, compiled with numba.

Arcs are stored pairwise (every arc knows the index of its reverse) in
CSR order by tail vertex. Capacities are residuals and are modified in
place; comparisons use an absolute slack `eps` so rounding dust cannot
stall the discharge loop.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def push_relabel(n, first, arc_to, arc_pair, cap, source, sink, eps):
    height = np.zeros(n, dtype=np.int64)
    excess = np.zeros(n)
    cur = first[:n].copy()
    hcount = np.zeros(2 * n + 2, dtype=np.int64)
    hcount[0] = n - 1
    height[source] = n
    hcount[n] += 1

    qcap = n + 2
    queue = np.empty(qcap, dtype=np.int64)
    qhead = 0
    qtail = 0
    inqueue = np.zeros(n, dtype=np.bool_)

    for a in range(first[source], first[source + 1]):
        delta = cap[a]
        if delta > eps:
            v = arc_to[a]
            cap[a] = 0.0
            cap[arc_pair[a]] += delta
            excess[v] += delta
            if v != source and v != sink and not inqueue[v]:
                queue[qtail] = v
                qtail = (qtail + 1) % qcap
                inqueue[v] = True

    while qhead != qtail:
        u = queue[qhead]
        qhead = (qhead + 1) % qcap
        inqueue[u] = False

        while excess[u] > eps:
            a = cur[u]
            stop = first[u + 1]
            while a < stop:
                if cap[a] > eps and height[u] == height[arc_to[a]] + 1:
                    break
                a += 1
            cur[u] = a
            if a < stop:
                v = arc_to[a]
                delta = excess[u]
                if cap[a] < delta:
                    delta = cap[a]
                cap[a] -= delta
                cap[arc_pair[a]] += delta
                excess[u] -= delta
                excess[v] += delta
                if v != source and v != sink and excess[v] > eps and not inqueue[v]:
                    queue[qtail] = v
                    qtail = (qtail + 1) % qcap
                    inqueue[v] = True
            else:
                old = height[u]
                newh = 2 * n + 1
                for b in range(first[u], stop):
                    if cap[b] > eps:
                        h = height[arc_to[b]] + 1
                        if h < newh:
                            newh = h
                if newh > 2 * n:
                    # no residual arc at all; drop stranded dust
                    break
                hcount[old] -= 1
                if hcount[old] == 0 and old < n:
                    # gap heuristic: levels above an empty one cannot reach
                    # the sink; lift them past n
                    for w in range(n):
                        if w != source and old < height[w] < n:
                            hcount[height[w]] -= 1
                            height[w] = n + 1
                            hcount[n + 1] += 1
                    if newh < n:
                        newh = n + 1
                height[u] = newh
                hcount[newh] += 1
                cur[u] = first[u]
                if newh >= 2 * n:
                    break


@njit(cache=True, nogil=True)
def reachable_from(n, first, arc_to, cap, start, eps):
    """Vertices reachable from `start` along residual (cap > eps) arcs."""
    visited = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    visited[start] = True
    stack[0] = start
    top = 1
    while top > 0:
        top -= 1
        u = stack[top]
        for a in range(first[u], first[u + 1]):
            v = arc_to[a]
            if cap[a] > eps and not visited[v]:
                visited[v] = True
                stack[top] = v
                top += 1
    return visited


@njit(cache=True, nogil=True)
def reaches(n, first, arc_to, arc_pair, cap, target, eps):
    """Vertices with a residual path into `target` (reverse reachability)."""
    visited = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    visited[target] = True
    stack[0] = target
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        for a in range(first[v], first[v + 1]):
            u = arc_to[a]
            # the arc u -> v is the pair of v -> u
            if cap[arc_pair[a]] > eps and not visited[u]:
                visited[u] = True
                stack[top] = u
                top += 1
    return visited
