"""Run formation: in-place sorted runs with cooperative load sorting."""
from __future__ import annotations

import random
from collections import Counter

import numpy as np
import pytest

from emsort.core import DATA_PHASES, MachineConfig, PHASE_RUN_FORMATION
from emsort.runform import (
    RunDescriptor, form_runs, internal_parallel_sort, run_layout,
    shuffle_block_ids,
)
from emsort.vdisk import Cluster

from helpers import build, fill, input_elements


def read_run(cl, run: RunDescriptor):
    elems = []
    for pos in range(run.length):
        pe, lb, off = run.locate(pos)
        elems.append(cl.peek_block(pe, lb)[off])
    return elems


def test_run_layout_covers_input_with_trailing_short_run():
    cfg = MachineConfig(P=4, D=2, B=4, m=32, N=320)   # M=128
    assert run_layout(cfg) == [(128, 32), (128, 32), (64, 16)]
    assert run_layout(MachineConfig(P=2, D=2, B=4, m=32, N=0)) == []


def test_two_processor_desk_example():
    # PE 0 holds keys [4, 3], PE 1 holds [2, 1]; the formed run must leave
    # [1, 2] on PE 0 and [3, 4] on PE 1, written over the same blocks.
    cfg = MachineConfig(P=2, D=1, B=1, m=2, N=4, randomize=False)
    cl = Cluster(cfg)
    pe_blocks = []
    for pe, keys in enumerate([[4, 3], [2, 1]]):
        blocks = []
        for i, key in enumerate(keys):
            lb = cl.alloc_block(pe)
            cl.seed_block(pe, lb, [(key, 2 * pe + i)])
            blocks.append(lb)
        pe_blocks.append(blocks)
    runs = form_runs(cl, pe_blocks)
    assert len(runs) == 1
    assert [e[0] for e in read_run(cl, runs[0])] == [1, 2, 3, 4]
    assert [cl.peek_block(0, lb)[0][0] for lb in runs[0].blocks[0]] == [1, 2]
    assert [cl.peek_block(1, lb)[0][0] for lb in runs[0].blocks[1]] == [3, 4]


def test_runs_are_sorted_and_partition_the_input():
    cl = build(P=4, D=2, B=4, m=32, N=384, seed=3)
    gen = fill(cl, "random", 3)
    before = sorted(input_elements(cl, gen))
    runs = form_runs(cl, gen.pe_blocks)
    all_elems = []
    for run in runs:
        elems = read_run(cl, run)
        keys = [e[0] for e in elems]
        assert keys == sorted(keys)
        all_elems.extend(elems)
    assert sorted(all_elems) == before


def test_formation_io_is_exactly_two_passes_and_in_place():
    cl = build(P=4, D=2, B=4, m=32, N=384, seed=5)
    gen = fill(cl, "random", 5)
    peak_before = [cl.peak_allocated(pe) for pe in range(4)]
    runs = form_runs(cl, gen.pe_blocks)
    N, B = cl.cfg.N, cl.cfg.B
    assert cl.counters.phase_blocks_read(PHASE_RUN_FORMATION) * B == N
    assert cl.counters.phase_blocks_written(PHASE_RUN_FORMATION) * B == N
    # write-back reuses the input blocks: no new allocations at all
    assert [cl.peak_allocated(pe) for pe in range(4)] == peak_before
    claimed = {(pe, lb) for run in runs
               for pe, blocks in enumerate(run.blocks) for lb in blocks}
    original = {(pe, lb) for pe, blocks in enumerate(gen.pe_blocks)
                for lb in blocks}
    assert claimed == original


def test_sorted_input_forms_runs_without_communication():
    for randomize in (False, True):
        cl = build(P=4, D=2, B=4, m=32, N=384, seed=1, randomize=randomize)
        gen = fill(cl, "sorted", 1)
        form_runs(cl, gen.pe_blocks)
        assert cl.counters.data_sent_total((PHASE_RUN_FORMATION,)) == 0


def test_internal_parallel_sort_chunks_are_exact_rank_splits():
    rng = random.Random(77)
    cl = build(P=3, D=1, B=4, m=40, N=120)
    loads = [[(rng.randrange(1000), 100 * p + i) for i in range(40)]
             for p in range(3)]
    chunks = internal_parallel_sort(cl, loads)
    assert [len(c) for c in chunks] == [40, 40, 40]
    flat = [e for chunk in chunks for e in chunk]
    assert [e[0] for e in flat] == sorted(e[0] for e in flat)
    assert sorted(flat) == sorted(e for load in loads for e in load)
    with pytest.raises(MemoryError):
        internal_parallel_sort(cl, [[(0, 0)] * 41, [], []])


def test_shuffle_is_seeded_and_respects_toggle():
    cfg = MachineConfig(P=2, D=2, B=4, m=32, N=256, seed=11)
    blocks = list(range(10, 42))
    once = shuffle_block_ids(cfg, 0, blocks)
    again = shuffle_block_ids(cfg, 0, blocks)
    other_pe = shuffle_block_ids(cfg, 1, blocks)
    assert once == again
    assert sorted(once) == sorted(blocks)
    assert once != other_pe
    off = MachineConfig(P=2, D=2, B=4, m=32, N=256, seed=11, randomize=False)
    assert shuffle_block_ids(off, 0, blocks) == blocks


def test_shuffle_positions_are_uniform():
    # chi-squared over the position of block 0 across seeds; 3-sigma gate
    n_blocks, trials = 8, 800
    counts = Counter()
    for seed in range(trials):
        cfg = MachineConfig(P=1, D=1, B=1, m=8, N=8, seed=seed)
        counts[shuffle_block_ids(cfg, 0, list(range(n_blocks))).index(0)] += 1
    expect = trials / n_blocks
    chi2 = sum((counts[i] - expect) ** 2 / expect for i in range(n_blocks))
    dof = n_blocks - 1
    assert chi2 < dof + 3 * (2 * dof) ** 0.5


def test_every_kth_element_is_sampled_with_positions():
    cl = build(P=2, D=2, B=4, m=16, N=64, K=4, seed=2)
    gen = fill(cl, "random", 2)
    runs = form_runs(cl, gen.pe_blocks)
    for run in runs:
        elems = read_run(cl, run)
        expected = [(elems[g][0], g) for g in range(0, run.length, 4)]
        assert sorted(run.samples, key=lambda s: s[1]) == expected


def test_locate_addresses_every_position():
    cl = build(P=2, D=2, B=4, m=16, N=64, seed=4)
    gen = fill(cl, "random", 4)
    run = form_runs(cl, gen.pe_blocks)[0]
    seen = set()
    for pos in range(run.length):
        pe, lb, off = run.locate(pos)
        assert 0 <= off < run.block_size
        assert pos // run.share == pe
        seen.add((pe, lb, off))
    assert len(seen) == run.length


def test_random_loads_spread_over_input_blocks():
    # with the shuffle on, the first run should draw blocks from scattered
    # input positions rather than the first prefix
    cfg = MachineConfig(P=1, D=2, B=4, m=64, N=1024, seed=8)
    blocks = list(range(256))
    order = shuffle_block_ids(cfg, 0, blocks)
    first_load = order[:16]
    assert max(first_load) > 32   # astronomically unlikely to fail by chance
    spread = np.std(first_load)
    assert spread > 20
