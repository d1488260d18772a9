"""
Net-centric gate-level netlist: nets are vertices (Input / Output / Internal),
cell instances are typed hyper-edges from their input pins to their output
pins. Includes the JSON document codec, combinational-island partitioning and
bit-parallel functional simulation.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from . import cells as cell_logic
from .errors import InvalidInputError, LibraryMismatchError, MalformedNetlistError, NetlistParseError

if TYPE_CHECKING:
    from .library import CellLibrary

logger = logging.getLogger(__name__)

NETLIST_FORMAT = "orthrus-netlist"
NETLIST_VERSION = 1


class NetKind(str, Enum):
    INPUT = "Input"
    OUTPUT = "Output"
    INTERNAL = "Internal"


@dataclass(frozen=True)
class Net:
    id: str
    kind: NetKind = NetKind.INTERNAL


@dataclass(frozen=True, eq=False)
class Cell:
    """One cell instance; `pins` maps pin name to net id"""
    id: str
    type: str
    pins: Dict[str, str] = field(default_factory=dict)

    @property
    def input_pins(self) -> List[str]:
        return [p for p in self.pins if not cell_logic.is_output_pin(p)]

    @property
    def output_pins(self) -> List[str]:
        return [p for p in self.pins if cell_logic.is_output_pin(p)]

    @property
    def input_nets(self) -> List[str]:
        return [self.pins[p] for p in self.input_pins]

    @property
    def output_nets(self) -> List[str]:
        return [self.pins[p] for p in self.output_pins]

    @property
    def is_register(self) -> bool:
        return cell_logic.is_register(self.type)


class NetGraph:
    """
    Immutable netlist graph.

    Construction checks that every pin references an existing net and that
    no net has two drivers; `check=True` additionally verifies driver rules
    per net kind and combinational acyclicity.
    """

    def __init__(self, nets: Iterable[Net], cells: Iterable[Cell], name: str = "netlist",
                 attrs: Optional[Dict] = None, check: bool = True):
        self.name = name
        self.attrs = dict(attrs or {})
        self.nets: Dict[str, Net] = {}
        for net in nets:
            if net.id in self.nets:
                raise MalformedNetlistError(f"duplicate net id {net.id}")
            self.nets[net.id] = net
        self.cells: Dict[str, Cell] = {}
        self.driver: Dict[str, Tuple[str, str]] = {}
        self.loads: Dict[str, List[Tuple[str, str]]] = {nid: [] for nid in self.nets}
        for cell in cells:
            if cell.id in self.cells:
                raise MalformedNetlistError(f"duplicate cell id {cell.id}")
            self.cells[cell.id] = cell
            for pin, nid in cell.pins.items():
                if nid not in self.nets:
                    raise NetlistParseError(f"cell {cell.id} pin {pin} references unknown net {nid}")
                if cell_logic.is_output_pin(pin):
                    if nid in self.driver:
                        raise MalformedNetlistError(
                            f"net {nid} has multiple drivers: {self.driver[nid][0]} and {cell.id}")
                    self.driver[nid] = (cell.id, pin)
                else:
                    self.loads[nid].append((cell.id, pin))
        if check:
            self.validate()

    def validate(self) -> None:
        for cell in self.cells.values():
            if not cell.output_pins:
                raise NetlistParseError(f"cell {cell.id} ({cell.type}) has no output pin")
            if cell_logic.is_basic(cell.type):
                expected = set(cell_logic.input_pins(cell.type)) | set(cell_logic.output_pins(cell.type))
                missing = expected - set(cell.pins)
                extra = set(cell.pins) - expected
                if missing or extra:
                    raise NetlistParseError(
                        f"cell {cell.id} ({cell.type}) pin mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for net in self.nets.values():
            if net.kind is NetKind.INPUT and net.id in self.driver:
                raise MalformedNetlistError(f"input net {net.id} is driven by cell {self.driver[net.id][0]}")
            if net.kind is not NetKind.INPUT and net.id not in self.driver:
                raise MalformedNetlistError(f"{net.kind.value} net {net.id} has no driver")
        self.topological_cells()

    def __len__(self) -> int:
        return len(self.cells)

    def __repr__(self) -> str:
        return f"NetGraph({self.name!r}, nets={len(self.nets)}, cells={len(self.cells)})"

    def nets_of_kind(self, kind: NetKind) -> List[str]:
        return [n.id for n in self.nets.values() if n.kind is kind]

    @property
    def inputs(self) -> List[str]:
        return self.nets_of_kind(NetKind.INPUT)

    @property
    def outputs(self) -> List[str]:
        return self.nets_of_kind(NetKind.OUTPUT)

    def registers(self) -> List[Cell]:
        return [c for c in self.cells.values() if c.is_register]

    def combinational_cells(self) -> List[Cell]:
        return [c for c in self.cells.values() if not c.is_register]

    def cell_type_counts(self) -> Counter:
        return Counter(c.type for c in self.cells.values())

    def driver_cell(self, net_id: str) -> Optional[Cell]:
        entry = self.driver.get(net_id)
        return self.cells[entry[0]] if entry else None

    def combinational_driver(self, net_id: str) -> Optional[Cell]:
        cell = self.driver_cell(net_id)
        return None if cell is None or cell.is_register else cell

    @cached_property
    def _cell_order(self) -> Dict[str, int]:
        return {cid: i for i, cid in enumerate(self.cells)}

    @cached_property
    def cell_graph(self) -> nx.DiGraph:
        """Combinational cells with an edge u -> v when u drives a net v reads"""
        graph = nx.DiGraph()
        for cell in self.cells.values():
            if cell.is_register:
                continue
            graph.add_node(cell.id)
            for nid in cell.input_nets:
                src = self.combinational_driver(nid)
                if src is not None:
                    graph.add_edge(src.id, cell.id)
        return graph

    @cached_property
    def _topological(self) -> Tuple[str, ...]:
        try:
            return tuple(nx.lexicographical_topological_sort(self.cell_graph))
        except nx.NetworkXUnfeasible:
            cycle = [edge[0] for edge in nx.find_cycle(self.cell_graph)]
            raise MalformedNetlistError(f"combinational cycle through cells {cycle}")

    def topological_cells(self) -> List[str]:
        """Combinational cell ids, every driver before its loads"""
        return list(self._topological)

    def subgraph(self, cell_ids: Iterable[str], name: Optional[str] = None) -> "NetGraph":
        """
        Fragment over the given cells with net kinds relative to the fragment:
        nets not driven inside are Input; nets read outside it, graph outputs
        and unread nets are Output; the rest Internal.
        """
        inside = set(cell_ids)
        unknown = inside - self.cells.keys()
        if unknown:
            raise InvalidInputError(f"unknown cells {sorted(unknown)[:3]}")
        members = sorted(inside, key=self._cell_order.__getitem__)
        touched: Dict[str, None] = {}
        for cid in members:
            for nid in self.cells[cid].pins.values():
                touched.setdefault(nid)
        nets = []
        for nid in touched:
            drv = self.driver.get(nid)
            if drv is None or drv[0] not in inside:
                kind = NetKind.INPUT
            elif (self.nets[nid].kind is NetKind.OUTPUT or not self.loads[nid]
                  or any(load[0] not in inside for load in self.loads[nid])):
                kind = NetKind.OUTPUT
            else:
                kind = NetKind.INTERNAL
            nets.append(Net(nid, kind))
        cells = [self.cells[cid] for cid in members]
        return NetGraph(nets, cells, name=name or f"{self.name}/fragment", check=False)


def partition_combinational(g: NetGraph) -> List[NetGraph]:
    """
    Combinational islands between register boundaries.

    Cells sharing a net that is not a register output end up in the same
    island. A graph without registers is returned as its own single island.
    """
    if not g.registers():
        return [g]
    union = nx.Graph()
    for cell in g.combinational_cells():
        union.add_node(cell.id)
    for nid in g.nets:
        drv = g.driver_cell(nid)
        if drv is not None and drv.is_register:
            continue
        members = [cid for cid, _ in g.loads[nid] if not g.cells[cid].is_register]
        if drv is not None:
            members.append(drv.id)
        for a, b in zip(members, members[1:]):
            union.add_edge(a, b)
    order = {cid: i for i, cid in enumerate(g.cells)}
    components = sorted((sorted(comp, key=order.get) for comp in nx.connected_components(union)),
                        key=lambda comp: order[comp[0]])
    islands = [g.subgraph(comp, name=f"{g.name}/island{i}") for i, comp in enumerate(components)]
    logger.debug(f"Partitioned {g.name} into {len(islands)} combinational islands")
    return islands


# ---------------------------------------------------------------------------
# Document codec

def write_netlist(g: NetGraph) -> Dict:
    return {
        "format": NETLIST_FORMAT,
        "version": NETLIST_VERSION,
        "name": g.name,
        "attrs": dict(g.attrs),
        "nets": [{"id": n.id, "kind": n.kind.value} for n in g.nets.values()],
        "cells": [{"id": c.id, "type": c.type, "pins": dict(c.pins)} for c in g.cells.values()],
    }


def parse_netlist(doc: Union[Dict, str]) -> NetGraph:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise NetlistParseError(f"netlist document is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise NetlistParseError("netlist document must be a JSON object")
    if doc.get("format", NETLIST_FORMAT) != NETLIST_FORMAT or doc.get("version") != NETLIST_VERSION:
        raise NetlistParseError(f"unsupported netlist document {doc.get('format')} v{doc.get('version')}")
    nets = []
    for i, raw in enumerate(doc.get("nets", [])):
        if not isinstance(raw, dict) or "id" not in raw:
            raise NetlistParseError(f"net #{i}: missing 'id'")
        try:
            kind = NetKind(raw.get("kind", NetKind.INTERNAL.value))
        except ValueError:
            raise NetlistParseError(f"net {raw['id']}: unknown kind {raw.get('kind')!r}")
        nets.append(Net(str(raw["id"]), kind))
    cells = []
    for i, raw in enumerate(doc.get("cells", [])):
        for key in ("id", "type", "pins"):
            if not isinstance(raw, dict) or key not in raw:
                raise NetlistParseError(f"cell #{i}: missing '{key}'")
        if not isinstance(raw["pins"], dict):
            raise NetlistParseError(f"cell {raw['id']}: 'pins' must be an object")
        cells.append(Cell(str(raw["id"]), str(raw["type"]), {str(p): str(n) for p, n in raw["pins"].items()}))
    return NetGraph(nets, cells, name=doc.get("name", "netlist"), attrs=doc.get("attrs"))


def save_netlist(g: NetGraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(write_netlist(g), indent=1))
    logger.info(f"Wrote netlist {g.name} ({len(g)} cells) to {path}")
    return path


def load_netlist(path: Union[str, Path]) -> NetGraph:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise NetlistParseError(f"cannot read netlist {path}: {e}")
    return parse_netlist(text)


# ---------------------------------------------------------------------------
# Simulation

def bus(prefix: str, width: int) -> List[str]:
    """Net ids of a little-endian bus"""
    return [f"{prefix}[{k}]" for k in range(width)]


def to_bits(values, width: int) -> List[np.ndarray]:
    """Little-endian bit planes of unsigned integers"""
    v = np.asarray(values, dtype=np.int64)
    return [((v >> k) & 1).astype(bool) for k in range(width)]


def from_bits(bits: Sequence) -> np.ndarray:
    out = np.zeros(np.shape(np.asarray(bits[0])), dtype=np.int64)
    for k, plane in enumerate(bits):
        out |= np.asarray(plane, dtype=np.int64) << k
    return out


def _evaluate_cell(cell: Cell, values: Dict[str, np.ndarray], library: Optional["CellLibrary"]) -> Dict[str, np.ndarray]:
    if cell_logic.is_basic(cell.type):
        out = cell_logic.evaluate(cell.type, {p: values[cell.pins[p]] for p in cell.input_pins})
        return {cell.pins[cell.output_pins[0]]: out}
    if library is None or cell.type not in library.fused:
        raise LibraryMismatchError(f"cell {cell.id}: no definition for fused type {cell.type}")
    ports = library.fused[cell.type].evaluate(
        {p: values[cell.pins[p]] for p in cell.input_pins}, library)
    return {cell.pins[p]: ports[p] for p in cell.output_pins}


def evaluate_combinational(g: NetGraph, assignment: Mapping[str, np.ndarray],
                           library: Optional["CellLibrary"] = None) -> Dict[str, np.ndarray]:
    """Settle the combinational logic for fixed Input-net and register-output values"""
    values = dict(assignment)
    for cid in g.topological_cells():
        values.update(_evaluate_cell(g.cells[cid], values, library))
    return values


def simulate(g: NetGraph, inputs: Union[Mapping, Sequence[Mapping]], cycles: Optional[int] = None,
             library: Optional["CellLibrary"] = None) -> Dict[str, Union[bool, np.ndarray]]:
    """
    Cycle-based functional simulation.

    `inputs` is one assignment held for every cycle or a list with one
    assignment per cycle. Values are bools or numpy bool arrays (one lane per
    test vector). Registers start at 0. Returns the Output-net values after the
    last register update.
    """
    if isinstance(inputs, Mapping):
        schedule = [inputs] * (1 if cycles is None else cycles)
    else:
        schedule = list(inputs)
        if cycles is not None and cycles != len(schedule):
            raise InvalidInputError(f"cycles={cycles} but {len(schedule)} per-cycle assignments given")
    if not schedule:
        raise InvalidInputError("simulate needs at least one cycle")

    scalar = all(np.ndim(v) == 0 for step in schedule for v in step.values())
    lanes = max((np.size(v) for step in schedule for v in step.values()), default=1)
    input_nets = set(g.inputs)
    prepared = []
    for t, step in enumerate(schedule):
        unknown = set(step) - input_nets
        if unknown:
            raise InvalidInputError(f"cycle {t}: {sorted(unknown)[:3]} are not input nets")
        missing = [n for n in g.inputs if n not in step]
        if missing:
            raise InvalidInputError(f"cycle {t}: input net {missing[0]} not assigned")
        prepared.append({n: np.broadcast_to(np.asarray(v, dtype=bool), (lanes,)) for n, v in step.items()})

    registers = g.registers()
    state = {r.pins["Q"]: np.zeros(lanes, dtype=bool) for r in registers}
    values: Dict[str, np.ndarray] = {}
    for step in prepared:
        values = evaluate_combinational(g, {**step, **state}, library)
        state = {r.pins["Q"]: values[r.pins["D"]] for r in registers}
    values = evaluate_combinational(g, {**prepared[-1], **state}, library)

    outputs = {n: values[n] for n in g.outputs}
    if scalar:
        return {n: bool(v[0]) for n, v in outputs.items()}
    return outputs
