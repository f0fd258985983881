"""Shared types for the sorting-cluster simulator: elements, machine
configuration, and per-phase I/O / communication counters.

Elements are ``(key, serial)`` tuples.  ``key`` is an unsigned 64-bit sort
key; ``serial`` is an opaque payload stand-in that round-trips through
serialization (``elem_size - 8`` little-endian bytes).  The key 2**64 - 1 is
reserved for sentinel padding; generators never emit it as a data key.

Within one merge or selection instance the full order on elements is the
lexicographic order on ``(key, origin_run, origin_position)``, which is total
because no two elements share an origin.  The helpers here expose that order
as plain tuple comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

Element = tuple[int, int]

MAX_KEY = (1 << 64) - 1
#: First component of a conceptual +infinity order key; compares above every
#: element key including stored sentinels.
INF_KEY = 1 << 64

SENTINEL_SERIAL = -1

PHASE_SETUP = "setup"
PHASE_RUN_FORMATION = "run_formation"
PHASE_SELECTION = "selection"
PHASE_ALL_TO_ALL = "all_to_all"
PHASE_LOCAL_MERGE = "local_merge"
PHASE_STRIPED_MERGE = "striped_merge"

#: Phases that belong to the engines proper.  ``setup`` covers input
#: materialization and is excluded from engine I/O totals.
ENGINE_PHASES = (
    PHASE_RUN_FORMATION,
    PHASE_SELECTION,
    PHASE_ALL_TO_ALL,
    PHASE_LOCAL_MERGE,
    PHASE_STRIPED_MERGE,
)
ALL_PHASES = (PHASE_SETUP,) + ENGINE_PHASES

#: Phases moving payload data in the canonical engine; selection probes are
#: reported separately so the 4N identity can be stated crisply.
DATA_PHASES = (
    PHASE_RUN_FORMATION,
    PHASE_ALL_TO_ALL,
    PHASE_LOCAL_MERGE,
    PHASE_STRIPED_MERGE,
)

RNG_NAME = "pcg64"


def sentinel() -> Element:
    return (MAX_KEY, SENTINEL_SERIAL)


def is_sentinel(elem: Element) -> bool:
    return elem[0] == MAX_KEY and elem[1] == SENTINEL_SERIAL


def order_key(elem: Element, run: int, pos: int) -> tuple[int, int, int]:
    """Total-order key of an element at ``pos`` of ``run``."""
    return (elem[0], run, pos)


def compare(a: tuple[int, int, int], b: tuple[int, int, int]) -> int:
    """Three-way comparison of ``(key, run, pos)`` order keys."""
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def strictly_less(a: tuple[int, int, int], b: tuple[int, int, int]) -> bool:
    return a < b


@dataclass(frozen=True)
class MachineConfig:
    """Cluster shape and problem size.

    P  -- number of processing elements (PEs)
    D  -- disks per PE
    B  -- block size in elements
    m  -- internal memory per PE in elements
    N  -- total number of elements (after padding to a multiple of B*P)
    K  -- sample rate in elements; 0 means "use B"
    """

    P: int
    D: int
    B: int
    m: int
    N: int
    K: int = 0
    seed: int = 0
    randomize: bool = True
    elem_size: int = 16

    @property
    def M(self) -> int:
        return self.P * self.m

    @property
    def R(self) -> int:
        return 0 if self.N == 0 else math.ceil(self.N / self.M)

    @property
    def sample_rate(self) -> int:
        return self.K if self.K > 0 else self.B

    @property
    def payload_size(self) -> int:
        return self.elem_size - 8

    @property
    def total_disks(self) -> int:
        return self.P * self.D

    @property
    def blocks_per_pe(self) -> int:
        return self.N // (self.P * self.B) if self.P and self.B else 0

    @property
    def merge_arity(self) -> int:
        """Maximum runs merged per striped pass: half the global memory in
        blocks, the other half being reserved for write buffers and
        per-run leftovers."""
        return self.M // (2 * self.B) if self.B else 0

    def striped_passes(self) -> int:
        if self.R <= 1:
            return 0
        a = self.merge_arity
        if a < 2:
            raise ValueError("merge arity < 2; striped engine infeasible")
        passes = 0
        runs = self.R
        while runs > 1:
            runs = math.ceil(runs / a)
            passes += 1
        return passes


def validate_config(cfg: MachineConfig, engine: str = "canonical") -> list[str]:
    """Return a list of violated constraints (empty when the config is usable).

    The canonical engine additionally needs one buffer block per run during
    the final local merge, hence R*B <= m.  The striped engine instead needs
    a merge arity of at least 2 whenever more than one run exists.
    """
    bad: list[str] = []
    if cfg.P < 1:
        bad.append("P < 1")
    if cfg.D < 1:
        bad.append("D < 1")
    if cfg.B < 1:
        bad.append("B < 1")
    if cfg.m < cfg.B:
        bad.append("m < B")
    if cfg.N < 0:
        bad.append("N < 0")
    if cfg.elem_size < 8:
        bad.append("elem_size < 8")
    if cfg.K < 0:
        bad.append("K < 0")
    if cfg.m and cfg.B and cfg.m % cfg.B != 0:
        bad.append("m % B != 0")
    if cfg.P and cfg.B and cfg.N % (cfg.B * cfg.P) != 0:
        bad.append("N % (B*P) != 0")
    if engine == "canonical":
        if cfg.B and cfg.m and cfg.R * cfg.B > cfg.m:
            bad.append("R*B > m")
        # The redistribution planner needs one buffer block per potential
        # send partner plus one working block.
        if cfg.B and cfg.m and cfg.P * cfg.B > cfg.m:
            bad.append("P*B > m")
    elif engine == "striped":
        if cfg.R > 1 and cfg.merge_arity < 2:
            bad.append("merge arity < 2")
    else:
        bad.append(f"unknown engine {engine!r}")
    return bad


_BOOL_WORDS = {"on": True, "true": True, "1": True, "yes": True,
               "off": False, "false": False, "0": False, "no": False}

_INT_FIELDS = {"P", "D", "B", "m", "N", "K", "seed", "elem_size"}


def parse_config_text(text: str) -> dict[str, object]:
    """Parse ``key=value`` lines into a MachineConfig field dict.

    Blank lines and ``#`` comments are ignored; keys must be MachineConfig
    field names.
    """
    known = {f.name for f in fields(MachineConfig)}
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key == "randomize":
            try:
                out[key] = _BOOL_WORDS[value.lower()]
            except KeyError:
                raise ValueError(f"line {lineno}: bad boolean {value!r}") from None
        elif key in _INT_FIELDS:
            out[key] = int(value)
        else:
            out[key] = value
    return out


def load_config(path: str, overrides: dict[str, object] | None = None) -> MachineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    if overrides:
        values.update(overrides)
    return MachineConfig(**values)  # type: ignore[arg-type]


def element_to_bytes(elem: Element, elem_size: int) -> bytes:
    """Little-endian key followed by the payload serial."""
    key, serial = elem
    payload_size = elem_size - 8
    if serial < 0:  # sentinel
        payload = b"\xff" * payload_size
    else:
        payload = (serial % (1 << (8 * payload_size))).to_bytes(payload_size, "little") \
            if payload_size else b""
    return key.to_bytes(8, "little") + payload


def element_from_bytes(data: bytes, elem_size: int) -> Element:
    key = int.from_bytes(data[:8], "little")
    payload = data[8:elem_size]
    if key == MAX_KEY and payload == b"\xff" * (elem_size - 8):
        return sentinel()
    serial = int.from_bytes(payload, "little") if payload else 0
    return (key, serial)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Stable per-purpose sub-seed derivation."""
    x = seed & 0xFFFFFFFFFFFFFFFF
    for t in tags:
        x = _splitmix64(x ^ (t & 0xFFFFFFFFFFFFFFFF))
    return x


def checksum128(elems) -> tuple[int, int]:
    """Order-independent fingerprint: (count, sum of mixed hashes mod 2**128).

    Equal multisets of elements produce equal fingerprints regardless of
    arrangement; a single changed key or payload changes the sum.
    """
    total = 0
    count = 0
    mask = (1 << 128) - 1
    for key, serial in elems:
        h = _splitmix64(key) ^ ((_splitmix64(serial & 0xFFFFFFFFFFFFFFFF) << 64))
        h ^= _splitmix64(key ^ 0xD6E8FEB86659FD93) << 32
        total = (total + h) & mask
        count += 1
    return count, total


class PhaseCounters:
    """Exact per-phase accounting: block I/O per (pe, disk), element
    communication per pe, control traffic, striped I/O steps, and an
    instrumented overhead tally (sentinel padding, partial-block waste,
    boundary re-reads) used by the accounting identities."""

    def __init__(self, P: int, D: int):
        self.P = P
        self.D = D
        self.blocks_read = {ph: [[0] * D for _ in range(P)] for ph in ALL_PHASES}
        self.blocks_written = {ph: [[0] * D for _ in range(P)] for ph in ALL_PHASES}
        self.elements_sent = {ph: [0] * P for ph in ALL_PHASES}
        self.elements_received = {ph: [0] * P for ph in ALL_PHASES}
        self.control_values = {ph: [0] * P for ph in ALL_PHASES}
        self.io_steps = {ph: 0 for ph in ALL_PHASES}
        self.overhead_elements = {ph: 0 for ph in ALL_PHASES}

    def note_read(self, phase: str, pe: int, disk: int, blocks: int = 1) -> None:
        self.blocks_read[phase][pe][disk] += blocks

    def note_write(self, phase: str, pe: int, disk: int, blocks: int = 1) -> None:
        self.blocks_written[phase][pe][disk] += blocks

    def add_sent(self, phase: str, pe: int, n: int) -> None:
        self.elements_sent[phase][pe] += n

    def add_received(self, phase: str, pe: int, n: int) -> None:
        self.elements_received[phase][pe] += n

    def add_control(self, phase: str, pe: int, n: int) -> None:
        self.control_values[phase][pe] += n

    def add_steps(self, phase: str, n: int) -> None:
        self.io_steps[phase] += n

    def add_overhead(self, phase: str, n: int) -> None:
        self.overhead_elements[phase] += n

    # -- aggregation helpers -------------------------------------------------

    def phase_blocks_read(self, phase: str, pe: int | None = None) -> int:
        rows = self.blocks_read[phase]
        if pe is None:
            return sum(sum(r) for r in rows)
        return sum(rows[pe])

    def phase_blocks_written(self, phase: str, pe: int | None = None) -> int:
        rows = self.blocks_written[phase]
        if pe is None:
            return sum(sum(r) for r in rows)
        return sum(rows[pe])

    def phase_element_io(self, phase: str, B: int, pe: int | None = None) -> int:
        return B * (self.phase_blocks_read(phase, pe) + self.phase_blocks_written(phase, pe))

    def total_element_io(self, B: int, phases=ENGINE_PHASES) -> int:
        return sum(self.phase_element_io(ph, B) for ph in phases)

    def data_sent_total(self, phases=ENGINE_PHASES) -> int:
        return sum(sum(self.elements_sent[ph]) for ph in phases)

    def per_disk_totals(self, phases=ENGINE_PHASES):
        """(reads, writes) matrices summed over the given phases."""
        reads = [[0] * self.D for _ in range(self.P)]
        writes = [[0] * self.D for _ in range(self.P)]
        for ph in phases:
            for pe in range(self.P):
                for d in range(self.D):
                    reads[pe][d] += self.blocks_read[ph][pe][d]
                    writes[pe][d] += self.blocks_written[ph][pe][d]
        return reads, writes

    def snapshot(self) -> "PhaseCounters":
        import copy

        return copy.deepcopy(self)
