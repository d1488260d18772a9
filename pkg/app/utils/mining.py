"""
Frequent subcircuit mining and cell fusion.

An occurrence is a set S of combinational cells, connected through shared
nets, with at most i_max input nets, at most o_max output nets and at most
d_max cells on its longest internal chain. Each occurrence is keyed by a
canonical form of its fragment (cell types, pin roles, relative net kinds),
so isomorphic occurrences land in the same bucket.

Enumeration: every cell driving an output net of S is a root, and the cells
of S that reach a root form a cone whose inputs are inputs of S. Cones are
grown per root by adding drivers of cone inputs; occurrences with several
roots are unions of cones sharing an input net.
"""

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, Iterator, List, Sequence, Tuple

from . import cells as cell_logic
from .library import FusedCellDef
from .netlist import Cell, NetGraph, NetKind, partition_combinational, write_netlist

logger = logging.getLogger(__name__)

I_MAX = 4
O_MAX = 2
D_MAX = 3

_KIND_CODE = {NetKind.INPUT: "I", NetKind.OUTPUT: "O", NetKind.INTERNAL: "N"}


@dataclass
class SubcircuitPattern:
    canonical_key: str
    example: NetGraph
    count: int
    io_profile: Tuple[int, int, int]

    @property
    def n_cells(self) -> int:
        return len(self.example)

    @property
    def cell_types(self) -> List[str]:
        return sorted(c.type for c in self.example.cells.values())

    def to_dict(self) -> Dict:
        return {
            "key": self.canonical_key,
            "count": self.count,
            "io_profile": list(self.io_profile),
            "cell_types": self.cell_types,
            "fragment": write_netlist(self.example),
        }


@dataclass(frozen=True)
class Occurrence:
    cells: FrozenSet[str]
    inputs: FrozenSet[str]
    outputs: Tuple[str, ...]
    depth: int


# ---------------------------------------------------------------------------
# Canonical form

def _rank(signatures: Sequence) -> List[int]:
    order = {sig: i for i, sig in enumerate(sorted(set(signatures)))}
    return [order[s] for s in signatures]


def _refine(colors: List[int], adj: List[List[Tuple]]) -> List[int]:
    n_colors = len(set(colors))
    while True:
        sigs = [(colors[v], tuple(sorted((lab, colors[u]) for lab, u in adj[v]))) for v in range(len(colors))]
        colors = _rank(sigs)
        k = len(set(colors))
        if k == n_colors:
            return colors
        n_colors = k


def _leaves(colors: List[int], adj: List[List[Tuple]]) -> Iterator[List[int]]:
    """Discrete colorings reached by individualizing the first non-singleton class"""
    counts = Counter(colors)
    if len(counts) == len(colors):
        yield colors
        return
    target = min(c for c, k in counts.items() if k > 1)
    for v in [i for i, c in enumerate(colors) if c == target]:
        split = [2 * c for c in colors]
        split[v] = 2 * target - 1
        yield from _leaves(_refine(_rank(split), adj), adj)


@lru_cache(maxsize=65536)
def _canonical_from_raw(raw) -> Tuple[str, Tuple[int, ...]]:
    """
    Canonical key of a locally numbered structure plus the canonical rank of
    each local net.
    """
    cells, kinds = raw
    n_cells = len(cells)
    labels = [("c", t) for t, _ in cells] + [("n", k) for k in kinds]
    adj: List[List[Tuple]] = [[] for _ in labels]
    edges = []
    for i, (cell_type, pins) in enumerate(cells):
        for pin, j in pins:
            lab = (cell_logic.pin_role(cell_type, pin), cell_logic.is_output_pin(pin))
            adj[i].append((lab, n_cells + j))
            adj[n_cells + j].append((lab, i))
            edges.append((i, lab, n_cells + j))

    best = None
    best_pos = None
    for leaf in _leaves(_refine(_rank(labels), adj), adj):
        # leaf colors are a permutation 0..n-1
        form = (tuple(labels[v] for v in sorted(range(len(leaf)), key=leaf.__getitem__)),
                tuple(sorted((leaf[i], lab, leaf[j]) for i, lab, j in edges)))
        if best is None or form < best:
            best, best_pos = form, leaf
    key = hashlib.sha1(repr(best).encode()).hexdigest()[:24]
    return f"{n_cells}c-{key}", tuple(best_pos[n_cells:])


def _raw_form(cells: Sequence[Tuple[str, Dict[str, str]]], kind_of) -> Tuple[Tuple, List[str]]:
    local: Dict[str, int] = {}
    entries = []
    for cell_type, pins in cells:
        entry = []
        for pin in sorted(pins):
            nid = pins[pin]
            if nid not in local:
                local[nid] = len(local)
            entry.append((pin, local[nid]))
        entries.append((cell_type, tuple(entry)))
    nets = list(local)
    return (tuple(entries), tuple(kind_of(n) for n in nets)), nets


def canonical_labeling(fragment: NetGraph) -> Tuple[str, List[str], List[str]]:
    """Canonical key plus the fragment's input and output nets in canonical order"""
    raw, nets = _raw_form([(c.type, c.pins) for c in fragment.cells.values()],
                          lambda n: _KIND_CODE[fragment.nets[n].kind])
    key, ranks = _canonical_from_raw(raw)
    ordered = [nets[i] for i in sorted(range(len(nets)), key=ranks.__getitem__)]
    inputs = [n for n in ordered if fragment.nets[n].kind is NetKind.INPUT]
    outputs = [n for n in ordered if fragment.nets[n].kind is NetKind.OUTPUT]
    return key, inputs, outputs


def canonical_repr(fragment: NetGraph) -> str:
    return canonical_labeling(fragment)[0]


# ---------------------------------------------------------------------------
# Occurrence enumeration

class _Index:
    """Flat adjacency of the combinational part of a netlist"""

    def __init__(self, g: NetGraph):
        self.g = g
        order = g.topological_cells()
        self.pos = {cid: i for i, cid in enumerate(order)}
        self.order = order
        self.cell_in = {cid: tuple(dict.fromkeys(g.cells[cid].input_nets)) for cid in order}
        self.cell_out = {cid: tuple(g.cells[cid].output_nets) for cid in order}
        self.comb_driver = {n: cid for cid in order for n in self.cell_out[cid]}
        self.readers = {n: [cid for cid, _ in loads] for n, loads in g.loads.items()}
        self.graph_output = {n for n in g.nets if g.nets[n].kind is NetKind.OUTPUT}

    def inputs(self, cells: FrozenSet[str]) -> FrozenSet[str]:
        driven = {n for c in cells for n in self.cell_out[c]}
        return frozenset(n for c in cells for n in self.cell_in[c] if n not in driven)

    def driven(self, cells: FrozenSet[str]) -> FrozenSet[str]:
        return frozenset(n for c in cells for n in self.cell_out[c])

    def outputs(self, cells: FrozenSet[str]) -> Tuple[str, ...]:
        outs = []
        for c in sorted(cells, key=self.pos.__getitem__):
            for n in self.cell_out[c]:
                readers = self.readers[n]
                if n in self.graph_output or not readers or any(r not in cells for r in readers):
                    outs.append(n)
        return tuple(outs)

    def depth(self, cells: FrozenSet[str]) -> int:
        level: Dict[str, int] = {}
        for c in sorted(cells, key=self.pos.__getitem__):
            below = [level[self.comb_driver[n]] for n in self.cell_in[c]
                     if self.comb_driver.get(n) in cells]
            level[c] = 1 + max(below, default=0)
        return max(level.values(), default=0)

    def kind_code(self, cells: FrozenSet[str], outputs: Tuple[str, ...]):
        driven = self.driven(cells)
        outs = set(outputs)
        return lambda n: "I" if n not in driven else ("O" if n in outs else "N")

    def raw_form(self, occ: Occurrence):
        ordered = sorted(occ.cells, key=self.pos.__getitem__)
        return _raw_form([(self.g.cells[c].type, self.g.cells[c].pins) for c in ordered],
                         self.kind_code(occ.cells, occ.outputs))


def _cones(index: _Index, root: str, i_max: int, d_max: int) -> List[Tuple[FrozenSet[str], FrozenSet[str]]]:
    """Cells sets closed toward `root` with depth <= d_max and at most i_max inputs"""
    seen = set()
    found = []
    stack = [frozenset([root])]
    while stack:
        cone = stack.pop()
        if cone in seen:
            continue
        seen.add(cone)
        if index.depth(cone) > d_max:
            continue
        ins = index.inputs(cone)
        if len(ins) <= i_max:
            found.append((cone, ins))
        for n in ins:
            drv = index.comb_driver.get(n)
            if drv is not None:
                stack.append(cone | {drv})
    return found


def enumerate_occurrences(g: NetGraph, i_max: int = I_MAX, o_max: int = O_MAX,
                          d_max: int = D_MAX) -> List[Occurrence]:
    """Every valid occurrence of g exactly once, in a deterministic order"""
    return _enumerate(_Index(g), i_max, o_max, d_max)


def _enumerate(index: _Index, i_max: int, o_max: int, d_max: int) -> List[Occurrence]:
    cones = []
    for root in index.order:
        for cells, ins in _cones(index, root, i_max, d_max):
            cones.append((root, cells, ins, index.driven(cells)))
    by_input: Dict[str, List[int]] = {}
    for k, (_, _, ins, _) in enumerate(cones):
        for n in ins:
            by_input.setdefault(n, []).append(k)

    candidates: Dict[FrozenSet[str], None] = {}
    level = []
    for root, cells, ins, drv in cones:
        if cells not in candidates:
            candidates[cells] = None
            level.append((cells, ins, drv, frozenset([root])))
    for _ in range(1, o_max):
        grown: Dict[FrozenSet[str], Tuple] = {}
        for cells, ins, drv, roots in level:
            for n in sorted(ins):
                for k in by_input.get(n, ()):
                    root, c_cells, c_ins, c_drv = cones[k]
                    if root in roots or c_cells <= cells:
                        continue
                    union_ins = ins | c_ins
                    if len(union_ins) > i_max or ins & c_drv or c_ins & drv:
                        continue
                    union = cells | c_cells
                    if union in candidates or union in grown:
                        continue
                    grown[union] = (union, union_ins, drv | c_drv, roots | {root})
        for union in grown:
            candidates[union] = None
        level = list(grown.values())

    occurrences = []
    for cells in candidates:
        outputs = index.outputs(cells)
        if not outputs or len(outputs) > o_max:
            continue
        ins = index.inputs(cells)
        if len(ins) > i_max:
            continue
        depth = index.depth(cells)
        if depth > d_max:
            continue
        occurrences.append(Occurrence(cells, ins, outputs, depth))
    return occurrences


def mine_subcircuits(g: NetGraph, d_max: int = D_MAX, o_max: int = O_MAX, i_max: int = I_MAX) -> List[SubcircuitPattern]:
    """Count every occurrence once under its canonical pattern; most frequent first"""
    index = _Index(g)
    occurrences = _enumerate(index, i_max, o_max, d_max)
    counts: Counter = Counter()
    examples: Dict[str, Occurrence] = {}
    for occ in occurrences:
        key, _ = _canonical_from_raw(index.raw_form(occ)[0])
        counts[key] += 1
        examples.setdefault(key, occ)
    patterns = []
    for key, count in counts.items():
        occ = examples[key]
        patterns.append(SubcircuitPattern(key, g.subgraph(occ.cells, name=f"pattern-{key}"), count,
                                          (len(occ.inputs), len(occ.outputs), occ.depth)))
    patterns.sort(key=lambda p: (-p.count, p.n_cells, p.canonical_key))
    logger.info(f"Mined {len(occurrences)} occurrences of {len(patterns)} patterns in {g.name}")
    return patterns


def mine_islands(g: NetGraph, d_max: int = D_MAX, o_max: int = O_MAX, i_max: int = I_MAX) -> List[SubcircuitPattern]:
    """
    Mine every combinational island of g. Structurally identical islands
    (replicated array elements) are mined once and their counts multiplied.
    """
    groups: Dict[Tuple, List[NetGraph]] = {}
    for island in partition_combinational(g):
        raw, _ = _raw_form([(c.type, c.pins) for c in island.cells.values()],
                           lambda n, isl=island: _KIND_CODE[isl.nets[n].kind])
        groups.setdefault(raw, []).append(island)
    merged: Dict[str, SubcircuitPattern] = {}
    for members in groups.values():
        for pattern in mine_subcircuits(members[0], d_max, o_max, i_max):
            total = pattern.count * len(members)
            if pattern.canonical_key in merged:
                merged[pattern.canonical_key].count += total
            else:
                merged[pattern.canonical_key] = SubcircuitPattern(pattern.canonical_key, pattern.example,
                                                                  total, pattern.io_profile)
    logger.info(f"Mined {len(groups)} distinct islands of {g.name}")
    return sorted(merged.values(), key=lambda p: (-p.count, p.n_cells, p.canonical_key))


def fusible_patterns(patterns: Iterable[SubcircuitPattern]) -> List[SubcircuitPattern]:
    """Multi-cell patterns whose every input net feeds at least two pins inside the pattern"""
    kept = []
    for pattern in patterns:
        frag = pattern.example
        if len(frag) < 2:
            continue
        if all(len(frag.loads[n]) >= 2 for n in frag.inputs):
            kept.append(pattern)
    return kept


def select_fusion_candidates(patterns: Iterable[SubcircuitPattern], n_ext: int) -> List[SubcircuitPattern]:
    """Top n_ext by count; ties by fewer cells, then key"""
    if n_ext <= 0:
        return []
    ranked = sorted(patterns, key=lambda p: (-p.count, p.n_cells, p.canonical_key))
    return ranked[:n_ext]


# ---------------------------------------------------------------------------
# Fusion

def make_fused_definitions(patterns: Sequence[SubcircuitPattern], prefix: str = "FC") -> List[FusedCellDef]:
    definitions = []
    for k, pattern in enumerate(patterns):
        key, inputs, outputs = canonical_labeling(pattern.example)
        definitions.append(FusedCellDef(f"{prefix}{k}", key, pattern.example, tuple(inputs), tuple(outputs)))
    return definitions


def apply_fusion(g: NetGraph, definitions: Iterable[FusedCellDef]) -> NetGraph:
    """
    Replace occurrences of the fused patterns by fused-cell instances.
    Greedy and overlap-free; larger patterns first, then definition order,
    then occurrences by their sorted cell ids.
    """
    definitions = sorted(definitions, key=lambda d: -len(d.fragment))
    if not definitions:
        return g
    wanted = {d.pattern_key for d in definitions}
    sizes = {len(d.fragment) for d in definitions}
    i_max = max(len(d.inputs) for d in definitions)
    o_max = max(len(d.outputs) for d in definitions)
    d_max = max(_Index(d.fragment).depth(frozenset(d.fragment.cells)) for d in definitions)

    index = _Index(g)
    matches: Dict[str, List[Tuple[Occurrence, List[str]]]] = {}
    for occ in _enumerate(index, i_max, o_max, d_max):
        if len(occ.cells) not in sizes:
            continue
        raw, nets = index.raw_form(occ)
        key, ranks = _canonical_from_raw(raw)
        if key in wanted:
            ordered = [nets[i] for i in sorted(range(len(nets)), key=ranks.__getitem__)]
            matches.setdefault(key, []).append((occ, ordered))

    used: set = set()
    removed_nets: set = set()
    fused_cells: List[Cell] = []
    tally: Counter = Counter()
    for definition in definitions:
        for occ, ordered in sorted(matches.get(definition.pattern_key, []), key=lambda m: sorted(m[0].cells)):
            if occ.cells & used:
                continue
            used |= occ.cells
            outs = set(occ.outputs)
            removed_nets |= {n for n in index.driven(occ.cells) if n not in outs}
            pins = {f"I{k}": n for k, n in enumerate(x for x in ordered if x in occ.inputs)}
            pins.update({f"Y{k}": n for k, n in enumerate(x for x in ordered if x in outs)})
            fused_cells.append(Cell(f"{definition.name}_{tally[definition.name]}", definition.name, pins))
            tally[definition.name] += 1

    nets = [n for n in g.nets.values() if n.id not in removed_nets]
    cells = [c for c in g.cells.values() if c.id not in used] + fused_cells
    fused = NetGraph(nets, cells, name=g.name, attrs={**g.attrs, "fused_instances": dict(tally)})
    logger.info(f"Fused {sum(tally.values())} instances into {g.name}: {dict(tally)}")
    return fused
