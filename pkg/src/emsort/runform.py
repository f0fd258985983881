"""Run formation: turn memory-sized stretches of the input into sorted runs.

Each processor shuffles the IDs of its local input blocks once (seeded, so
the permutation is reproducible) and successive runs consume consecutive
chunks of m/B of them.  A run is one memory load of the whole cluster
(M = P*m elements, the last run possibly shorter): the processors
cooperatively sort the load so that processor 0 ends up with the globally
smallest chunk and so on, and each chunk is written back over the very
blocks it was read from.  While writing, every K-th element of the run is
retained as a sample for splitter seeding.

The shuffle is what makes each run a random subset of the local blocks:
downstream, the rank cuts of such runs sit close to their slice boundaries,
which is what keeps redistribution volume low on adversarial inputs.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import Element, MachineConfig, PHASE_RUN_FORMATION, derive_seed
from .net import exchange_pieces, gather_splitters
from .selection import MemoryAccessor, select_all_ranks


@dataclass
class RunDescriptor:
    """Where a formed run lives and how to address it by rank."""

    index: int
    length: int
    share: int                    # elements per processor
    block_size: int
    blocks: list[list[int]]       # per processor, logical block ids in order
    samples: list[tuple[int, int]] = field(default_factory=list)

    def locate(self, pos: int) -> tuple[int, int, int]:
        """Map a run-global position to (pe, logical block, offset)."""
        pe, lp = divmod(pos, self.share)
        b, off = divmod(lp, self.block_size)
        return pe, self.blocks[pe][b], off


def run_layout(cfg: MachineConfig) -> list[tuple[int, int]]:
    """(length, per-processor share) for each run of the configured input."""
    layout = []
    remaining = cfg.N
    while remaining > 0:
        length = min(cfg.M, remaining)
        layout.append((length, length // cfg.P))
        remaining -= length
    return layout


def shuffle_block_ids(cfg: MachineConfig, pe: int, blocks: list[int]) -> list[int]:
    """Seeded random permutation of one processor's input block IDs."""
    if not cfg.randomize or len(blocks) < 2:
        return list(blocks)
    rng = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, 1, pe)))
    return [blocks[k] for k in rng.permutation(len(blocks))]


def internal_parallel_sort(cluster, loads: list[list[Element]],
                           phase: str = PHASE_RUN_FORMATION) -> list[list[Element]]:
    """Sort one memory load across processors.

    ``loads[p]`` is processor p's unsorted share.  Returns equal-size sorted
    chunks, chunk p preceding chunk p+1, with the single data exchange
    charged to ``phase``.  Local sorts order elements by (key, serial); the
    chunk cuts are exact rank splits, so chunk sizes match the shares.
    """
    P = len(loads)
    m = cluster.cfg.m
    for load in loads:
        if len(load) > m:
            raise MemoryError(f"load of {len(load)} elements exceeds m={m}")
    locals_sorted = [sorted(load) for load in loads]
    total = sum(len(lst) for lst in locals_sorted)
    if total == 0:
        return [[] for _ in range(P)]
    if total % P:
        raise ValueError("load size is not divisible by processor count")
    share = total // P
    acc = MemoryAccessor(locals_sorted)
    results = select_all_ranks(acc, [p * share for p in range(1, P)])
    cutpos = ([[0] * P] + [res.positions for res in results]
              + [[len(lst) for lst in locals_sorted]])
    # Every processor learns every cut position (control traffic).
    gather_splitters(cluster, [[cutpos[p][q] for p in range(1, P)]
                               for q in range(P)], phase)
    pieces = [[locals_sorted[q][cutpos[p][q]:cutpos[p + 1][q]]
               for p in range(P)] for q in range(P)]
    received = exchange_pieces(cluster, pieces, phase)
    return [list(heapq.merge(*received[p])) for p in range(P)]


def form_runs(cluster, pe_blocks: list[list[int]]) -> list[RunDescriptor]:
    """Form all runs in place.

    ``pe_blocks[p]`` lists processor p's input blocks in input order; each
    holds the same count and N = count * B * P.  Returns a descriptor per
    run, including the every-K-th sample gathered during write-back.
    """
    cfg = cluster.cfg
    B, K = cfg.B, cfg.sample_rate
    order = [shuffle_block_ids(cfg, p, pe_blocks[p]) for p in range(cfg.P)]
    layout = run_layout(cfg)
    runs: list[RunDescriptor] = []
    base = 0
    for i, (length, share) in enumerate(layout):
        take = share // B
        chunk = [sorted(order[p][base:base + take]) for p in range(cfg.P)]
        loads = []
        for p in range(cfg.P):
            elems: list[Element] = []
            for lb in order[p][base:base + take]:
                elems.extend(cluster.read_block(p, lb, PHASE_RUN_FORMATION))
            loads.append(elems)
        base += take
        chunks = internal_parallel_sort(cluster, loads, PHASE_RUN_FORMATION)
        samples: list[tuple[int, int]] = []
        for p, sorted_chunk in enumerate(chunks):
            for b, start in enumerate(range(0, share, B)):
                cluster.write_block(p, chunk[p][b],
                                    sorted_chunk[start:start + B], PHASE_RUN_FORMATION)
            g = -(-(p * share) // K) * K  # first sampled position in chunk
            while g < (p + 1) * share:
                samples.append((sorted_chunk[g - p * share][0], g))
                g += K
        runs.append(RunDescriptor(i, length, share, B, chunk, samples))
    return runs
