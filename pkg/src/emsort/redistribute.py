"""Phase 2: exact run splitting and the budgeted external all-to-all.

Every formed run is cut at the global ranks t*N/P, so that processor t is
assigned, per run, exactly the subsegment holding its slice of the final
order.  The cuts come from multiway selection seeded by the run samples.

The data exchange is organized around flows: one flow per (source,
destination, run) triple, covering the position-contiguous piece of the
run's cut that must change processors.  Flows are cut at block boundaries
and greedily packed into sub-rounds so that every processor's per-round
send and receive volumes fit in memory next to one working block.  A
destination writes each arriving piece straight to fresh blocks — only a
flow's final block can be ragged, and it is sentinel-padded — so nothing
is buffered across rounds and the padding is at most one block per flow.
Run subsegments that are already local are left in place and recorded by
reference, so a fully canonical input incurs zero I/O and zero
communication here.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import PHASE_ALL_TO_ALL, PHASE_SELECTION, sentinel
from .net import all_to_all_v, gather_splitters
from .runform import RunDescriptor
from .selection import DiskAccessor, select_all_ranks


class PlanError(Exception):
    pass


@dataclass
class SplitterMatrix:
    """Cut positions per boundary (rows 0..P) and run, plus search stats."""

    pos: list[list[int]]
    rounds: int
    touched: int
    blocks_read: int
    fallbacks: int

    @property
    def boundaries(self) -> int:
        return len(self.pos) - 1


@dataclass
class SegRef:
    """A position-contiguous piece of a staged run segment on one PE."""

    pe: int
    blocks: list[int]
    start: int              # element offset into blocks[0]
    length: int


@dataclass
class StagedRun:
    run: int
    length: int
    refs: list[SegRef]


@dataclass
class Redistribution:
    matrix: SplitterMatrix
    v_moved: int
    k: int
    partners: list[int]
    staged: list[list[StagedRun]]       # [dest][run]
    peak_footprint: list[int]


def compute_splitters(cluster, runs: list[RunDescriptor]) -> SplitterMatrix:
    """Exact cuts of every run at the ranks t*N/P, shared with all PEs."""
    cfg = cluster.cfg
    P = cfg.P
    total = sum(run.length for run in runs)
    # Samples travel to the selecting task: control traffic, 2 values each.
    contrib: list[list[int]] = [[] for _ in range(P)]
    for run in runs:
        for key, gpos in run.samples:
            contrib[gpos // run.share].extend((key, gpos))
    gather_splitters(cluster, contrib, PHASE_SELECTION)

    acc = DiskAccessor(cluster, runs, PHASE_SELECTION)
    ranks = [t * (total // P) for t in range(1, P)]
    results = select_all_ranks(acc, ranks,
                               [run.samples for run in runs], cfg.sample_rate)
    pos = [[0] * len(runs)]
    pos.extend(res.positions for res in results)
    pos.append([run.length for run in runs])
    flat = [v for row in pos[1:-1] for v in row]
    gather_splitters(cluster, [flat if p == 0 else [] for p in range(P)],
                     PHASE_SELECTION)
    return SplitterMatrix(pos,
                          sum(r.rounds for r in results),
                          sum(r.touched for r in results),
                          acc.blocks_read,
                          sum(1 for r in results if r.fell_back))


def _slice_pieces(run: RunDescriptor, lo: int, hi: int
                  ) -> list[tuple[int, int, int]]:
    """Per-source pieces (q, a, b) of run positions [lo, hi), q ascending."""
    if hi <= lo:
        return []
    out = []
    for q in range(lo // run.share, (hi - 1) // run.share + 1):
        a = max(lo, q * run.share)
        b = min(hi, (q + 1) * run.share)
        out.append((q, a, b))
    return out


def xfer_matrix(runs: list[RunDescriptor], matrix: SplitterMatrix
                ) -> list[list[int]]:
    """s[q][t]: elements source q must ship to destination t."""
    P = matrix.boundaries
    s = [[0] * P for _ in range(P)]
    for j, run in enumerate(runs):
        for t in range(P):
            for q, a, b in _slice_pieces(run, matrix.pos[t][j],
                                         matrix.pos[t + 1][j]):
                if q != t:
                    s[q][t] += b - a
    return s


def moved_volume(runs: list[RunDescriptor], matrix: SplitterMatrix) -> int:
    return sum(map(sum, xfer_matrix(runs, matrix)))


def per_run_moved(runs: list[RunDescriptor], matrix: SplitterMatrix) -> list[int]:
    P = matrix.boundaries
    out = []
    for j, run in enumerate(runs):
        v = 0
        for t in range(P):
            for q, a, b in _slice_pieces(run, matrix.pos[t][j],
                                         matrix.pos[t + 1][j]):
                if q != t:
                    v += b - a
        out.append(v)
    return out


def plan_rounds(volumes: list[list[int]], budget: int, B: int) -> int:
    """Sub-round count so per-round traffic fits ``budget`` on every PE.

    ``budget`` is the per-PE memory left for transfer payloads; one block
    per send partner is reserved out of it for submessage assembly.
    """
    P = len(volumes)
    k = 1
    for i in range(P):
        partners = sum(1 for t in range(P) if t != i and volumes[i][t] > 0)
        eff = budget - partners * B
        if eff < B:
            raise PlanError(
                f"memory budget {budget} infeasible: PE {i} has {partners} "
                f"partners and needs at least {(partners + 1) * B} elements")
        send = sum(volumes[i][t] for t in range(P) if t != i)
        recv = sum(volumes[q][i] for q in range(P) if q != i)
        k = max(k, -(-send // eff), -(-recv // eff))
    return k


def _local_ref(run: RunDescriptor, pe: int, lo: int, hi: int) -> SegRef:
    b0 = (lo - pe * run.share) // run.block_size
    b1 = (hi - 1 - pe * run.share) // run.block_size
    start = (lo - pe * run.share) - b0 * run.block_size
    return SegRef(pe, run.blocks[pe][b0:b1 + 1], start, hi - lo)


def _flow_list(runs: list[RunDescriptor], matrix: SplitterMatrix
               ) -> list[tuple[int, int, int, int, int]]:
    """All cross-PE flows (src, dest, run, lo, hi), deterministically ordered."""
    flows = []
    for t in range(matrix.boundaries):
        for j, run in enumerate(runs):
            for q, a, b in _slice_pieces(run, matrix.pos[t][j],
                                         matrix.pos[t + 1][j]):
                if q != t:
                    flows.append((q, t, j, a, b))
    return flows


def _schedule_flows(flows: list[tuple[int, int, int, int, int]],
                    eff: int, B: int, P: int
                    ) -> tuple[int, list[list[tuple[int, int, int]]]]:
    """Pack flow blocks into sub-rounds of ≤ ``eff`` elements per PE.

    Blocks of one flow are placed in non-decreasing rounds (first fit), so
    pieces of a flow arrive in position order.  Returns the round count and,
    per flow, its pieces as (round, lo, hi) element ranges; every piece is a
    whole number of blocks except a flow's final piece.
    """
    if eff < B:
        raise PlanError(
            f"per-round budget of {eff} elements is below one block ({B})")
    send_load: list[list[int]] = []
    recv_load: list[list[int]] = []
    pieces: list[list[tuple[int, int, int]]] = []
    for q, t, _j, lo, hi in flows:
        mine: list[tuple[int, int, int]] = []
        r = 0
        c = lo
        while c < hi:
            vol = min(B, hi - c)
            while True:
                if r == len(send_load):
                    send_load.append([0] * P)
                    recv_load.append([0] * P)
                if send_load[r][q] + vol <= eff and recv_load[r][t] + vol <= eff:
                    break
                r += 1
            send_load[r][q] += vol
            recv_load[r][t] += vol
            if mine and mine[-1][0] == r:
                mine[-1] = (r, mine[-1][1], c + vol)
            else:
                mine.append((r, c, c + vol))
            c += vol
        pieces.append(mine)
    return len(send_load), pieces


def external_all_to_all(cluster, runs: list[RunDescriptor],
                        matrix: SplitterMatrix) -> Redistribution:
    """Execute the redistribution; returns per-PE staged run segments."""
    cfg = cluster.cfg
    P, B = cfg.P, cfg.B
    pos = matrix.pos

    # Locally kept piece per (dest, run): the overlap of the cut with the
    # destination's own slice of the run.
    kept: dict[tuple[int, int], tuple[int, int]] = {}
    for t in range(P):
        for j, run in enumerate(runs):
            lo, hi = pos[t][j], pos[t + 1][j]
            klo = max(lo, t * run.share)
            khi = min(hi, (t + 1) * run.share)
            if klo < khi:
                kept[(t, j)] = (klo, khi)

    volumes = xfer_matrix(runs, matrix)
    v_moved = sum(map(sum, volumes))
    partners = [sum(1 for t in range(P) if t != q and volumes[q][t] > 0)
                for q in range(P)]
    plan_rounds(volumes, cfg.m, B)  # validates the memory budget
    flows = _flow_list(runs, matrix)
    k, flow_pieces = _schedule_flows(flows, cfg.m - B, B, P)

    by_round: list[list[tuple[int, int, int]]] = [[] for _ in range(k)]
    for f, mine in enumerate(flow_pieces):
        for r, a, b in mine:
            by_round[r].append((f, a, b))

    # refs_at[(t, j)]: (position, SegRef) of every arriving piece.
    refs_at: dict[tuple[int, int], list[tuple[int, SegRef]]] = {}
    peak = [0] * P
    reads = [0] * P
    extracted = [0] * P
    padding = 0

    for r in range(k):
        payloads: list[list[list]] = [[[] for _ in range(P)] for _ in range(P)]
        sent_vol = [0] * P
        for f, a, b in sorted(by_round[r],
                              key=lambda e: (flows[e[0]][0], flows[e[0]][2], e[1])):
            q, t, j, _lo, _hi = flows[f]
            elems = []
            p = a
            cur = None
            while p < b:
                _pe, lb, off = runs[j].locate(p)
                if (j, lb) != cur:
                    data = cluster.read_block(q, lb, PHASE_ALL_TO_ALL)
                    reads[q] += 1
                    cur = (j, lb)
                take = min(b - p, B - off)
                elems.extend(data[off:off + take])
                p += take
            payloads[q][t].append(((j, a), elems))
            extracted[q] += b - a
            sent_vol[q] += b - a
        received = all_to_all_v(cluster, payloads, PHASE_ALL_TO_ALL)
        cluster.counters.add_steps(PHASE_ALL_TO_ALL, 1)
        for t in range(P):
            arrived = sum(len(parcel[1]) for src in received[t] for parcel in src)
            footprint = max(arrived, sent_vol[t] + B)
            peak[t] = max(peak[t], footprint)
            if footprint > cfg.m:
                raise PlanError(f"round {r} footprint {footprint} exceeds "
                                f"m={cfg.m} on PE {t}")
            for src in received[t]:
                for (j, lo), elems in src:
                    blocks = []
                    for c in range(0, len(elems), B):
                        chunk = elems[c:c + B]
                        if len(chunk) < B:
                            padding += B - len(chunk)
                            chunk = chunk + [sentinel()] * (B - len(chunk))
                        lb = cluster.alloc_block(t)
                        cluster.write_block(t, lb, chunk, PHASE_ALL_TO_ALL)
                        blocks.append(lb)
                    refs_at.setdefault((t, j), []).append(
                        (lo, SegRef(t, blocks, 0, len(elems))))

    amplification = sum(reads) * B - sum(extracted)
    cluster.counters.add_overhead(PHASE_ALL_TO_ALL, padding + amplification)

    # Original run blocks with nothing locally kept are dead now.
    for j, run in enumerate(runs):
        for q in range(P):
            kq = kept.get((q, j))
            for b_idx, lb in enumerate(run.blocks[q]):
                g0 = q * run.share + b_idx * B
                if kq is None or g0 + B <= kq[0] or g0 >= kq[1]:
                    cluster.deallocate_block(q, lb)

    staged: list[list[StagedRun]] = []
    for t in range(P):
        per_run = []
        for j, run in enumerate(runs):
            lo, hi = pos[t][j], pos[t + 1][j]
            placed = list(refs_at.get((t, j), ()))
            if (t, j) in kept:
                klo, khi = kept[(t, j)]
                placed.append((klo, _local_ref(run, t, klo, khi)))
            placed.sort(key=lambda e: e[0])
            cursor = lo
            for at, ref in placed:
                if at != cursor:
                    raise PlanError(f"staged run {j} on PE {t} jumps from "
                                    f"{cursor} to {at}")
                cursor += ref.length
            if cursor != hi:
                raise PlanError(f"staged run {j} on PE {t} ends at {cursor}, "
                                f"expected {hi}")
            per_run.append(StagedRun(j, hi - lo, [ref for _, ref in placed]))
        staged.append(per_run)
    return Redistribution(matrix, v_moved, k, partners, staged, peak)
