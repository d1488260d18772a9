"""
Static timing analysis on the net-centric graph.

Launch points are Input nets and register outputs; capture points are Output
nets, register data inputs and nets nobody reads. Registers are ideal (zero
clock-to-q and setup). Timing runs over input-to-output arcs: a basic cell
times every arc at its delay, a fused cell each arc at its own delay.
Per-instance worst path delay comes from a forward arrival pass plus a
backward downstream pass; the worst paths are listed by a best-first search
seeded at the capture points.
"""

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Tuple

from .library import CellLibrary, CellRecord
from .netlist import Cell, NetGraph, NetKind

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 1000

Arcs = Dict[Tuple[str, str], float]


@dataclass(frozen=True)
class TimingPath:
    launch: str
    cells: Tuple[str, ...]
    capture: str
    delay: float


class TimingReport(NamedTuple):
    through_delay: Dict[str, float]
    paths: List[TimingPath]
    critical_delay: float


def _is_capture(g: NetGraph, nid: str) -> bool:
    loads = g.loads[nid]
    return (g.nets[nid].kind is NetKind.OUTPUT or not loads
            or any(g.cells[cid].is_register for cid, _ in loads))


def cell_arcs(cell: Cell, record: CellRecord) -> Arcs:
    """(input net, output net) -> arc delay; pins sharing a net keep the slower arc"""
    arcs: Arcs = {}
    for ip in cell.input_pins:
        for op in cell.output_pins:
            d = record.arc_delay(ip, op)
            if d is None:
                continue
            key = (cell.pins[ip], cell.pins[op])
            arcs[key] = max(arcs.get(key, d), d)
    return arcs


def static_timing(g: NetGraph, lib: CellLibrary, top_k: int = DEFAULT_TOP_K) -> TimingReport:
    lib.check_covers(g)
    order = g.topological_cells()
    arcs = {cid: cell_arcs(g.cells[cid], lib.get(g.cells[cid].type)) for cid in order}

    arrival: Dict[str, float] = {nid: 0.0 for nid in g.nets if g.combinational_driver(nid) is None}
    for cid in order:
        for nid in g.cells[cid].output_nets:
            arrival[nid] = max((arrival[i] + d for (i, o), d in arcs[cid].items() if o == nid), default=0.0)

    capture = {nid for nid in g.nets if _is_capture(g, nid)}
    tail: Dict[str, float] = {}
    input_tail: Dict[str, Dict[str, float]] = {}
    for cid in reversed(order):
        for nid in g.cells[cid].output_nets:
            best = 0.0 if nid in capture else -math.inf
            for load, _ in g.loads[nid]:
                if load in input_tail:
                    best = max(best, input_tail[load].get(nid, -math.inf))
            tail[nid] = best
        per_input: Dict[str, float] = {}
        for (i, o), d in arcs[cid].items():
            per_input[i] = max(per_input.get(i, -math.inf), d + tail[o])
        input_tail[cid] = per_input

    through = {cid: max(arrival[i] + d + tail[o] for (i, o), d in arcs[cid].items()) for cid in order}
    critical = max((arrival[n] for n in capture), default=0.0)
    paths = _worst_paths(g, arcs, arrival, capture, top_k)
    logger.debug(f"STA on {g.name}: critical {critical:.4f} ns, {len(paths)} paths reported")
    return TimingReport(through, paths, critical)


def _worst_paths(g: NetGraph, arcs: Dict[str, Arcs], arrival: Dict[str, float], capture,
                 top_k: int) -> List[TimingPath]:
    """Best-first backward expansion; among equal bounds the newest entry goes first"""
    if top_k <= 0:
        return []
    counter = itertools.count()
    heap = []
    for nid in capture:
        if g.combinational_driver(nid) is not None:
            heap.append((-arrival[nid], -next(counter), nid, (), 0.0, nid))
    heapq.heapify(heap)
    seen = set()
    paths: List[TimingPath] = []
    while heap and len(paths) < top_k:
        _, _, nid, suffix, suffix_delay, cap = heapq.heappop(heap)
        drv = g.combinational_driver(nid)
        if drv is None:
            key = (nid, suffix, cap)
            if suffix and key not in seen:
                seen.add(key)
                paths.append(TimingPath(nid, suffix, cap, suffix_delay))
            continue
        for (inp, out), d in arcs[drv.id].items():
            if out != nid:
                continue
            heapq.heappush(heap, (-(arrival[inp] + d + suffix_delay), -next(counter), inp,
                                  (drv.id,) + suffix, d + suffix_delay, cap))
    return paths
