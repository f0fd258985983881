"""Local multiway merging of staged segments and the bounded batch merger."""
from __future__ import annotations

import random

from emsort.core import DATA_PHASES, PHASE_ALL_TO_ALL, PHASE_LOCAL_MERGE
from emsort.merge import batch_merge, local_multiway_merge
from emsort.redistribute import compute_splitters, external_all_to_all
from emsort.runform import form_runs

from helpers import build, fill, input_elements, oracle_agrees, output_elements


def pipeline(P=4, B=4, m=32, N=384, kind="random", seed=0):
    cl = build(P=P, D=2, B=B, m=m, N=N, seed=seed)
    gen = fill(cl, kind, seed)
    inputs = input_elements(cl, gen)   # snapshot before blocks are recycled
    runs = form_runs(cl, gen.pe_blocks)
    matrix = compute_splitters(cl, runs)
    redist = external_all_to_all(cl, runs, matrix)
    return cl, inputs, redist


# --- batch_merge oracle-first --------------------------------------------------

def test_batch_merge_drains_to_sorted_order():
    rng = random.Random(31)
    buffers = [sorted((rng.randrange(50), j * 100 + i) for i in range(20))
               for j in range(3)]
    expected = sorted((e[0], j, p) for j, buf in enumerate(buffers)
                      for p, e in enumerate(buf))
    offsets = [0, 0, 0]
    out = batch_merge([list(b) for b in buffers], offsets)
    assert [(e[0],) for e in out] == [(k,) for k, _j, _p in expected]


def test_batch_merge_respects_bound_and_leaves_rest():
    buffers = [[(1, 0), (4, 1), (9, 2)], [(2, 3), (4, 4), (7, 5)]]
    offsets = [0, 0]
    # strict bound: everything below key 4 of run 0 position 1
    out = batch_merge(buffers, offsets, bound=(4, 0, 1))
    assert [e[0] for e in out] == [1, 2]
    assert buffers == [[(4, 1), (9, 2)], [(4, 4), (7, 5)]]
    rest = batch_merge(buffers, [1, 1])
    assert [e[0] for e in rest] == [4, 4, 7, 9]


def test_batch_merge_ties_resolve_by_run_then_position():
    buffers = [[(5, 10), (5, 11)], [(5, 20)]]
    out = batch_merge(buffers, [0, 0])
    assert out == [(5, 10), (5, 11), (5, 20)]


def test_batch_merge_bound_excludes_equal_order_key():
    buffers = [[(3, 0)], [(3, 1)]]
    out = batch_merge(buffers, [0, 0], bound=(3, 1, 0))
    assert out == [(3, 0)]
    assert buffers == [[], [(3, 1)]]


# --- the merge phase -----------------------------------------------------------

def test_merge_produces_the_oracle_order():
    cl, inputs, redist = pipeline(seed=12)
    layout = local_multiway_merge(cl, redist.staged)
    assert oracle_agrees(inputs, output_elements(cl, layout))


def test_merge_of_single_run_is_a_straight_copy():
    cl, _inputs, redist = pipeline(P=2, m=64, N=128, kind="sorted")
    layout = local_multiway_merge(cl, redist.staged)
    outputs = output_elements(cl, layout)
    assert [e[0] for e in outputs] == sorted(e[0] for e in outputs)
    N, B = cl.cfg.N, cl.cfg.B
    assert cl.counters.phase_blocks_read(PHASE_LOCAL_MERGE) * B == N
    assert cl.counters.phase_blocks_written(PHASE_LOCAL_MERGE) * B == N


def test_merge_phase_needs_no_communication():
    cl, _inputs, redist = pipeline(seed=14)
    before = cl.counters.data_sent_total()
    local_multiway_merge(cl, redist.staged)
    assert cl.counters.data_sent_total() == before


def test_merge_output_is_block_aligned_per_processor():
    cl, _inputs, redist = pipeline(seed=15)
    layout = local_multiway_merge(cl, redist.staged)
    share_blocks = cl.cfg.N // cl.cfg.P // cl.cfg.B
    assert [len(blocks) for blocks in layout.per_pe] == [share_blocks] * cl.cfg.P


def test_merge_overhead_accounts_for_boundary_blocks():
    cl, _inputs, redist = pipeline(seed=16)
    local_multiway_merge(cl, redist.staged)
    overhead = cl.counters.overhead_elements[PHASE_LOCAL_MERGE]
    reads = cl.counters.phase_blocks_read(PHASE_LOCAL_MERGE) * cl.cfg.B
    consumed = sum(seg.length for per_run in redist.staged for seg in per_run)
    assert consumed == cl.cfg.N
    assert overhead == reads - consumed
    assert overhead >= 0


def test_merge_conserves_content_on_duplicate_heavy_input():
    cl, inputs, redist = pipeline(kind="duplicate_heavy", seed=17)
    layout = local_multiway_merge(cl, redist.staged)
    assert oracle_agrees(inputs, output_elements(cl, layout))
