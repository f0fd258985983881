"""Local multiway merging and the batch-merge kernel.

``local_multiway_merge`` is phase 3 of the rank-splitting engine: every
processor merges its R staged run segments into its final slice, reading
and writing each element once.  ``batch_merge`` is the kernel shared with
the striped engine: drain every buffered element strictly below a bound in
the total order (key, run, position), leaving later elements buffered.
"""
from __future__ import annotations

import heapq
from operator import itemgetter

from .core import Element, PHASE_LOCAL_MERGE
from .redistribute import StagedRun
from .vdisk import OutputLayout


def _iter_staged(cluster, staged: StagedRun, phase: str, stats: dict):
    """Yield a staged run segment in order; free blocks once consumed."""
    for ref in staged.refs:
        remaining = ref.length
        off = ref.start
        for lb in ref.blocks:
            if remaining <= 0:
                break
            data = cluster.read_block(ref.pe, lb, phase)
            stats["reads"] += 1
            take = min(remaining, len(data) - off)
            yield from data[off:off + take]
            remaining -= take
            off = 0
            cluster.deallocate_block(ref.pe, lb)


def local_multiway_merge(cluster, staged: list[list[StagedRun]]) -> OutputLayout:
    """Merge every processor's staged segments into its output slice."""
    cfg = cluster.cfg
    B = cfg.B
    per_pe: list[list[int]] = []
    for t in range(cfg.P):
        stats = {"reads": 0}
        streams = [_iter_staged(cluster, seg, PHASE_LOCAL_MERGE, stats)
                   for seg in staged[t]]
        # Stream order equals run order, so key-only merging realizes the
        # total order (key, run, position).
        merged = heapq.merge(*streams, key=itemgetter(0))
        out_blocks: list[int] = []
        buf: list[Element] = []
        written = 0
        for elem in merged:
            buf.append(elem)
            if len(buf) == B:
                lb = cluster.alloc_block(t)
                cluster.write_block(t, lb, buf, PHASE_LOCAL_MERGE)
                out_blocks.append(lb)
                written += B
                buf = []
        if buf:
            raise RuntimeError(
                f"output slice of PE {t} is {written + len(buf)} elements, "
                f"not a block multiple")
        consumed = sum(seg.length for seg in staged[t])
        cluster.counters.add_overhead(PHASE_LOCAL_MERGE,
                                      stats["reads"] * B - consumed)
        per_pe.append(out_blocks)
    return OutputLayout("canonical", per_pe=per_pe, stripe=None)


def batch_merge(buffers: list[list[Element]], offsets: list[int],
                bound: tuple[int, int, int] | None = None) -> list[Element]:
    """Pop everything strictly below ``bound`` from the run buffers, merged.

    ``buffers[j]`` holds the unconsumed prefix of run j starting at run
    position ``offsets[j]``; both are updated in place.  ``bound`` is an
    order key (key, run, position); ``None`` drains everything.
    """
    heap: list[tuple[int, int, int]] = []
    idx = [0] * len(buffers)
    for j, buf in enumerate(buffers):
        if buf:
            heapq.heappush(heap, (buf[0][0], j, offsets[j]))
    out: list[Element] = []
    while heap:
        key, j, p = heap[0]
        if bound is not None and (key, j, p) >= bound:
            break
        heapq.heappop(heap)
        out.append(buffers[j][idx[j]])
        idx[j] += 1
        if idx[j] < len(buffers[j]):
            heapq.heappush(heap, (buffers[j][idx[j]][0], j, p + 1))
    for j, taken in enumerate(idx):
        if taken:
            del buffers[j][:taken]
            offsets[j] += taken
    return out
