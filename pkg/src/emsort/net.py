"""Synchronous communication collectives with exact volume accounting.

Collectives are rendezvous points: every PE contributes its slot of the
argument in the same call, mirroring a bulk-synchronous exchange.  A shape
mismatch means some PE skipped the barrier and raises :class:`ProtocolError`
rather than deadlocking.  Self-addressed data stays local and is charged to
neither the sent nor the received counter.
"""
from __future__ import annotations

from typing import Any, Iterable, Sequence

from .core import Element
from .vdisk import Cluster

#: One tagged unit of an exchange: (caller tag, elements).
Parcel = tuple[Any, list]


class ProtocolError(Exception):
    pass


def _check_matrix(payloads: Sequence[Sequence[Iterable[Parcel]]], P: int) -> None:
    if len(payloads) != P:
        raise ProtocolError(f"all_to_all_v: {len(payloads)} source rows for {P} PEs")
    for src, row in enumerate(payloads):
        if len(row) != P:
            raise ProtocolError(
                f"all_to_all_v: source {src} provided {len(row)} destination slots"
            )


def all_to_all_v(
    cluster: Cluster,
    payloads: Sequence[Sequence[list[Parcel]]],
    phase: str,
) -> list[list[list[Parcel]]]:
    """Exchange ``payloads[src][dst]`` parcel lists; return ``received`` with
    ``received[dst][src]`` holding exactly the parcels ``src`` addressed to
    ``dst``, in sending order.  Element volumes are charged per PE for
    ``src != dst`` only."""
    P = cluster.cfg.P
    _check_matrix(payloads, P)
    received: list[list[list[Parcel]]] = [[[] for _ in range(P)] for _ in range(P)]
    counters = cluster.counters
    for src in range(P):
        for dst in range(P):
            parcels = payloads[src][dst]
            volume = sum(len(elems) for _tag, elems in parcels)
            if src != dst:
                counters.add_sent(phase, src, volume)
                counters.add_received(phase, dst, volume)
            received[dst][src] = [(tag, list(elems)) for tag, elems in parcels]
    return received


def exchange_pieces(
    cluster: Cluster,
    pieces: Sequence[Sequence[list[Element]]],
    phase: str,
) -> list[list[list[Element]]]:
    """Untagged convenience wrapper: ``pieces[src][dst]`` is one element list."""
    payloads = [[[(None, piece)] for piece in row] for row in pieces]
    received = all_to_all_v(cluster, payloads, phase)
    return [[slot[0][1] if slot else [] for slot in row] for row in received]


def gather_splitters(
    cluster: Cluster,
    contributions: Sequence[list],
    phase: str,
) -> list:
    """All-gather of small control values (splitter positions, counts).

    Every PE ends up with the concatenation in PE order.  The traffic is
    charged to the control counter, not to element volume.
    """
    P = cluster.cfg.P
    if len(contributions) != P:
        raise ProtocolError(
            f"gather_splitters: {len(contributions)} contributions for {P} PEs"
        )
    merged: list = []
    for values in contributions:
        merged.extend(values)
    total = len(merged)
    for pe in range(P):
        cluster.counters.add_control(phase, pe, total - len(contributions[pe]))
    return merged
