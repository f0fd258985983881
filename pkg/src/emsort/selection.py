"""Exact multiway selection over sorted runs.

Given R sorted runs and a target rank r, find per-run splitter positions
``pos`` with ``sum(pos) == r`` such that every element left of a splitter
precedes every element right of one under the total order
``(key, run, position)``.

The search keeps one window ``[a_j, b_j]`` per run that is known to contain
the run's final splitter.  Runs are conceptually padded with +infinity to a
common power-of-two length; windows start as the full padded range (or as a
narrow band around sample-derived starting positions) and lose half their
width each round.  A round compares the element in the middle of every
window against the largest element currently left of any cut and moves the
window's edge that the comparison rules out, then rebalances whole chunks
between runs with a priority queue until the chunk-granular rank matches the
target.  The final round works at chunk size one, which lands the cut
exactly; a closing sweep double-checks the order property and repairs it by
single-element exchanges in the (never observed) case that the starting
windows did not contain the true cut.

Starting positions may come from a per-run sample of every K-th element.  A
sample-derived start is normally within K of the exact cut, so the windowed
search needs only about ``log2 K`` rounds and touches one block per run.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

from .core import INF_KEY, Element, PHASE_SELECTION

OrderKey = tuple[int, int, int]


class SelectionError(Exception):
    pass


class MemoryAccessor:
    """Element access over in-memory sorted runs; counts distinct touches."""

    def __init__(self, runs: list[list[Element]]):
        self.runs = runs
        self.lengths = [len(run) for run in runs]
        self.touched = 0
        self.blocks_read = 0
        self._memo: dict[tuple[int, int], OrderKey] = {}

    def reset_memo(self) -> None:
        self._memo.clear()

    def order_key(self, run: int, pos: int) -> OrderKey:
        got = self._memo.get((run, pos))
        if got is not None:
            return got
        if pos >= self.lengths[run]:
            okey: OrderKey = (INF_KEY, run, pos)
        else:
            self.touched += 1
            okey = (self.runs[run][pos][0], run, pos)
        self._memo[(run, pos)] = okey
        return okey


class DiskAccessor:
    """Element access over disk-resident runs through block reads.

    ``segments`` supplies, per run, a ``length`` and a
    ``locate(pos) -> (pe, logical_block, offset)`` map.  A per-run
    most-recently-used block cache turns the clustered probes of the final
    low-step rounds into single reads.
    """

    def __init__(self, cluster, segments, phase: str = PHASE_SELECTION,
                 cache_blocks: bool = True):
        self.cluster = cluster
        self.segments = segments
        self.phase = phase
        self.cache_blocks = cache_blocks
        self.lengths = [seg.length for seg in segments]
        self.touched = 0
        self.blocks_read = 0
        self._cache: dict[int, tuple[tuple[int, int], list[Element]]] = {}
        self._memo: dict[tuple[int, int], OrderKey] = {}

    def reset_memo(self) -> None:
        self._memo.clear()

    def order_key(self, run: int, pos: int) -> OrderKey:
        got = self._memo.get((run, pos))
        if got is not None:
            return got
        if pos >= self.lengths[run]:
            okey: OrderKey = (INF_KEY, run, pos)
            self._memo[(run, pos)] = okey
            return okey
        self.touched += 1
        pe, lb, off = self.segments[run].locate(pos)
        block = None
        if self.cache_blocks:
            hit = self._cache.get(run)
            if hit is not None and hit[0] == (pe, lb):
                block = hit[1]
        if block is None:
            block = self.cluster.read_block(pe, lb, self.phase)
            self.blocks_read += 1
            if self.cache_blocks:
                self._cache[run] = ((pe, lb), block)
        okey = (block[off][0], run, pos)
        self._memo[(run, pos)] = okey
        return okey


@dataclass
class SelectResult:
    positions: list[int]
    rounds: int
    touched: int
    blocks_read: int
    fell_back: bool = False


def _neg(okey: OrderKey) -> OrderKey:
    return (-okey[0], -okey[1], -okey[2])


def _refine_windows(acc, r: int, a: list[int], b: list[int], n: int) -> int:
    """Halve the per-run windows ``[a, b]`` down to width zero.

    ``n + 1`` is twice the chunk size of the first round.  Each round probes
    the middle of every window, moves one window edge, and then shifts whole
    chunks between runs until the chunk-granular count left of the cuts
    matches ``r``.  Returns the number of rounds.
    """
    R = len(a)
    ns = acc.lengths
    rounds = 0
    while n > 0:
        n >>= 1
        rounds += 1
        # Pivot: the largest element currently left of any cut.
        lmax: OrderKey | None = None
        for i in range(R):
            if a[i] > 0:
                okey = acc.order_key(i, a[i] - 1)
                if lmax is None or okey > lmax:
                    lmax = okey
        # Keep the half of each window the pivot comparison allows.
        for i in range(R):
            middle = (a[i] + b[i]) >> 1
            if lmax is not None and middle < ns[i] \
                    and acc.order_key(i, middle) < lmax:
                a[i] = min(a[i] + n + 1, ns[i])
            else:
                b[i] -= n + 1
        # Rebalance whole chunks until the chunk-granular rank matches.
        skew = r // (n + 1) - sum(x // (n + 1) for x in a)
        if skew > 0:
            pq = [(acc.order_key(i, b[i]), i)
                  for i in range(R) if 0 <= b[i] < ns[i]]
            heapq.heapify(pq)
            while skew and pq:
                _okey, src = heapq.heappop(pq)
                a[src] = min(a[src] + n + 1, ns[src])
                b[src] += n + 1
                if 0 <= b[src] < ns[src]:
                    heapq.heappush(pq, (acc.order_key(src, b[src]), src))
                skew -= 1
        elif skew < 0:
            pq = [(_neg(acc.order_key(i, a[i] - 1)), i)
                  for i in range(R) if a[i] > 0]
            heapq.heapify(pq)
            while skew and pq:
                _nkey, src = heapq.heappop(pq)
                a[src] -= n + 1
                b[src] -= n + 1
                if a[src] > 0:
                    heapq.heappush(pq, (_neg(acc.order_key(src, a[src] - 1)), src))
                skew += 1
    return rounds


def _exact_sweep(acc, r: int, pos: list[int]) -> int:
    """Force ``sum(pos) == r`` and the order property by unit moves.

    Greedy single-element advances/retreats followed by exchanges of the
    largest selected element against the smallest unselected one converge to
    the unique rank-``r`` cut from any starting positions.  Returns the
    number of unit moves (zero whenever the windowed search already landed
    exactly).
    """
    R = len(pos)
    ns = acc.lengths
    count = sum(pos)
    moves = 0
    guard = 4 * sum(ns) + 64
    while count < r:
        j = min((i for i in range(R) if pos[i] < ns[i]),
                key=lambda i: acc.order_key(i, pos[i]))
        pos[j] += 1
        count += 1
        moves += 1
    while count > r:
        j = max((i for i in range(R) if pos[i] > 0),
                key=lambda i: acc.order_key(i, pos[i] - 1))
        pos[j] -= 1
        count -= 1
        moves += 1
    while True:
        if moves > guard:
            raise SelectionError("exact sweep did not converge")
        hi: tuple[OrderKey, int] | None = None
        lo: tuple[OrderKey, int] | None = None
        for i in range(R):
            if pos[i] > 0:
                okey = acc.order_key(i, pos[i] - 1)
                if hi is None or okey > hi[0]:
                    hi = (okey, i)
            if pos[i] < ns[i]:
                okey = acc.order_key(i, pos[i])
                if lo is None or okey < lo[0]:
                    lo = (okey, i)
        if hi is None or lo is None or hi[0] < lo[0]:
            return moves
        pos[hi[1]] -= 1
        pos[lo[1]] += 1
        moves += 2


def _order_ok(acc, pos: list[int]) -> bool:
    """Largest selected element strictly precedes smallest unselected one."""
    lo: OrderKey | None = None
    hi: OrderKey | None = None
    for j, p in enumerate(pos):
        if p > acc.lengths[j]:
            return False
        if p > 0:
            okey = acc.order_key(j, p - 1)
            if lo is None or okey > lo:
                lo = okey
        if p < acc.lengths[j]:
            okey = acc.order_key(j, p)
            if hi is None or okey < hi:
                hi = okey
    return lo is None or hi is None or lo < hi


def multiway_select(acc, r: int,
                    init: list[int] | None = None,
                    step: int | None = None) -> SelectResult:
    """Exact splitters for rank ``r`` over the accessor's runs.

    ``init``/``step`` give a starting guess (the true cut is expected within
    ``step`` of ``init`` per run); without one the search starts from full
    windows over the padded run length.
    """
    R = len(acc.lengths)
    total = sum(acc.lengths)
    if not 0 <= r <= total:
        raise ValueError(f"rank {r} outside [0, {total}]")
    touched0 = acc.touched
    read0 = acc.blocks_read
    acc.reset_memo()
    ns = acc.lengths
    maxlen = max(ns, default=0)
    if R == 0 or total == 0 or maxlen == 0 or r == 0:
        return SelectResult([0] * R, 0, 0, 0)
    if r == total:
        return SelectResult(list(ns), 0, 0, 0)

    l = (1 << maxlen.bit_length()) - 1  # padded length, all runs

    if init is not None:
        if len(init) != R:
            raise ValueError("init length does not match run count")
        if step is None or step < 1:
            raise ValueError("init requires a positive step")
        # Window of one chunk on each side of the starting guess.
        c = 1 << (step - 1).bit_length() if step > 1 else 1
        c = min(c, (l + 1) >> 1)
        a = [max(0, min(init[i], ns[i]) - c) for i in range(R)]
        b = [a[i] + 2 * c - 1 for i in range(R)]
        n = 2 * c - 1
    else:
        # Initial partition: order the runs by their middle element and take
        # the left half of as many small-middled runs as the rank allows.
        n = l >> 1
        a = [0] * R
        b = [l] * R
        order = sorted((acc.order_key(i, n), i) for i in range(R) if n < ns[i])
        order += [((INF_KEY, i, n), i) for i in range(R) if n >= ns[i]]
        localrank = r // l
        j = 0
        while j < localrank and n + 1 <= ns[order[j][1]]:
            a[order[j][1]] += n + 1
            j += 1
        while j < R:
            b[order[j][1]] -= n + 1
            j += 1

    rounds = _refine_windows(acc, r, a, b, n)
    pos = [max(0, min(a[i], ns[i])) for i in range(R)]
    moves = _exact_sweep(acc, r, pos)
    if not _order_ok(acc, pos):
        raise SelectionError("splitter search failed")
    return SelectResult(pos, rounds, acc.touched - touched0,
                        acc.blocks_read - read0, moves > 0)


def sampled_init(samples: list[list[tuple[int, int]]], K: int, r: int
                 ) -> tuple[list[int], int]:
    """Starting splitters from per-run samples of every K-th element.

    ``samples[j]`` lists ``(key, position)`` pairs of run ``j`` in position
    order (position 0 always sampled).  Returns per-run start positions and
    the step ``K``: the start is the position of the last sample preceding
    the sample of rank ``r // K``, run by run.
    """
    if K < 1:
        raise ValueError("K < 1")
    flat = [(key, j, p) for j, entries in enumerate(samples) for key, p in entries]
    flat.sort()
    init = [0] * len(samples)
    if not flat or r == 0:
        return init, K
    x = flat[min(r // K, len(flat) - 1)]
    for key, j, p in flat:
        if (key, j, p) > x:
            break
        init[j] = p
    return init, K


def select_all_ranks(acc, ranks: list[int],
                     samples: list[list[tuple[int, int]]] | None = None,
                     K: int | None = None) -> list[SelectResult]:
    """Splitters for several ranks; results are componentwise monotone in r."""
    results: list[SelectResult] = []
    prev: list[int] | None = None
    for r in sorted(ranks):
        if samples is not None:
            init, step = sampled_init(samples, K if K else 1, r)
            res = multiway_select(acc, r, init, step)
        else:
            res = multiway_select(acc, r)
        if prev is not None and any(a > b for a, b in zip(prev, res.positions)):
            raise SelectionError("splitters are not monotone across ranks")
        prev = res.positions
        results.append(res)
    return results
