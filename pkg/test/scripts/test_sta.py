#!/usr/bin/env python3
"""
Static timing tests against hand-computed and brute-force oracles
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from app.utils import cells as cell_logic
from app.utils.cellmodel import extend_with_fused, fused_base_record, get_tech_factors
from app.utils.errors import LibraryMismatchError
from app.utils.library import CellLibrary, CellRecord, FusedCellDef, default_library
from app.utils.macgen import generate_mac_array, generate_multiplier, generate_pe
from app.utils.mining import apply_fusion, fusible_patterns, make_fused_definitions, mine_subcircuits, select_fusion_candidates
from app.utils.netlist import Cell, Net, NetGraph, NetKind
from app.utils.sta import static_timing


def _library(**delays):
    return CellLibrary({t: CellRecord(d, 0.001, 0.05) for t, d in delays.items()}, name="toy")


def _all_paths(g, delay):
    """Every launch-to-capture cell path with its delay (small graphs only)"""
    out = []

    def walk(nid, cells, total):
        loads = list(dict.fromkeys(cid for cid, _ in g.loads[nid] if not g.cells[cid].is_register))
        if cells and (g.nets[nid].kind is NetKind.OUTPUT or not g.loads[nid] or any(g.cells[cid].is_register for cid, _ in g.loads[nid])):
            out.append((tuple(cells), total))
        for cid in loads:
            cell = g.cells[cid]
            for nxt in cell.output_nets:
                walk(nxt, cells + [cid], total + delay[cell.type])

    for nid in g.nets:
        if g.combinational_driver(nid) is None:
            walk(nid, [], 0.0)
    return out


def test_chain_delays():
    print("🧪 three-cell chain")
    nets = [Net("a", NetKind.INPUT), Net("n1"), Net("n2"), Net("y", NetKind.OUTPUT)]
    cells = [Cell("u1", "INVx1", {"A": "a", "Y": "n1"}),
             Cell("u2", "BUFx2", {"A": "n1", "Y": "n2"}),
             Cell("u3", "INVx2", {"A": "n2", "Y": "y"})]
    report = static_timing(NetGraph(nets, cells), _library(INVx1=1.0, BUFx2=2.0, INVx2=3.0))
    assert report.critical_delay == pytest.approx(6.0)
    assert report.through_delay == pytest.approx({"u1": 6.0, "u2": 6.0, "u3": 6.0})
    assert report.paths[0].cells == ("u1", "u2", "u3")
    assert report.paths[0].delay == pytest.approx(6.0)
    print("✅ three-cell chain")


def test_reconvergent_fanout():
    nets = [Net("a", NetKind.INPUT), Net("b", NetKind.INPUT), Net("n1"), Net("n2"), Net("y", NetKind.OUTPUT)]
    cells = [Cell("slow", "BUFx2", {"A": "a", "Y": "n1"}),
             Cell("fast", "INVx1", {"A": "b", "Y": "n2"}),
             Cell("join", "AND2x2", {"A": "n1", "B": "n2", "Y": "y"})]
    report = static_timing(NetGraph(nets, cells), _library(BUFx2=5.0, INVx1=1.0, AND2x2=2.0))
    assert report.critical_delay == pytest.approx(7.0)
    assert report.through_delay["fast"] == pytest.approx(3.0)
    assert report.through_delay["join"] == pytest.approx(7.0)
    assert [p.delay for p in report.paths] == pytest.approx([7.0, 3.0])


@pytest.mark.parametrize("ct_type,cpa_type", [("WT", "SK"), ("DT", "BK")])
def test_matches_path_enumeration(ct_type, cpa_type):
    g = generate_multiplier(ct_type, cpa_type, 3)
    lib = default_library()
    report = static_timing(g, lib, top_k=10 ** 6)
    delay = {t: lib.get(t).delay for t in g.cell_type_counts()}
    paths = _all_paths(g, delay)
    assert report.critical_delay == pytest.approx(max(d for _, d in paths))
    for cid in g.topological_cells():
        worst = max(d for cells, d in paths if cid in cells)
        assert report.through_delay[cid] == pytest.approx(worst)
    assert len(report.paths) == len(paths)
    assert sorted(p.delay for p in report.paths) == pytest.approx(sorted(d for _, d in paths))


def test_paths_sorted_and_truncated():
    g = generate_mac_array("WT", "KS", 1, 1, 4)
    report = static_timing(g, default_library(), top_k=25)
    delays = [p.delay for p in report.paths]
    assert len(delays) == 25
    assert all(a >= b - 1e-12 for a, b in zip(delays, delays[1:]))
    assert delays[0] == pytest.approx(report.critical_delay)


def test_doubling_delays_doubles_critical_path():
    g = generate_mac_array("DT", "SK", 1, 1, 4)
    lib = default_library()
    single = static_timing(g, lib).critical_delay
    assert static_timing(g, lib.scaled(delay=2.0)).critical_delay == pytest.approx(2 * single)


def test_missing_cell_type():
    g = generate_multiplier("WT", "SK", 2)
    with pytest.raises(LibraryMismatchError):
        static_timing(g, _library(INVx1=1.0))

RANDOM_TYPES = ("INVx1", "BUFx2", "NAND2x1", "XOR2x2", "AND3x1", "MAJx1", "AOI21x1", "AO22x1")


def _random_dag(rng, n_cells):
    """Random combinational netlist: arbitrary fan-out, reconvergence, repeated input nets"""
    nets = [Net(f"i{k}", NetKind.INPUT) for k in range(int(rng.integers(2, 6)))]
    available = [n.id for n in nets]
    cells = []
    for k in range(n_cells):
        cell_type = RANDOM_TYPES[int(rng.integers(len(RANDOM_TYPES)))]
        pins = {p: available[int(rng.integers(len(available)))] for p in cell_logic.input_pins(cell_type)}
        pins["Y"] = f"n{k}"
        kind = NetKind.OUTPUT if k == n_cells - 1 or rng.random() < 0.2 else NetKind.INTERNAL
        nets.append(Net(f"n{k}", kind))
        cells.append(Cell(f"u{k}", cell_type, pins))
        available.append(f"n{k}")
    return NetGraph(nets, cells, name="random")


def test_random_dags_match_path_enumeration():
    print("🧪 200 random netlists against exhaustive path enumeration")
    rng = np.random.default_rng(2024)
    for _ in range(200):
        g = _random_dag(rng, int(rng.integers(1, 21)))
        delay = {t: float(rng.uniform(0.5, 3.0)) for t in RANDOM_TYPES}
        report = static_timing(g, _library(**delay), top_k=10 ** 6)
        paths = _all_paths(g, delay)
        assert report.critical_delay == pytest.approx(max(d for _, d in paths))
        for cid in g.topological_cells():
            assert report.through_delay[cid] == pytest.approx(max(d for cells, d in paths if cid in cells))
        assert sorted(p.delay for p in report.paths) == pytest.approx(sorted(d for _, d in paths))
    print("✅ 200 random netlists against exhaustive path enumeration")


def _full_adder():
    nets = [Net("a", NetKind.INPUT), Net("b", NetKind.INPUT), Net("c", NetKind.INPUT), Net("p"),
            Net("s", NetKind.OUTPUT), Net("co", NetKind.OUTPUT)]
    cells = [Cell("x1", "XOR2x2", {"A": "a", "B": "b", "Y": "p"}),
             Cell("x2", "XOR2x2", {"A": "p", "B": "c", "Y": "s"}),
             Cell("m", "MAJx1", {"A": "a", "B": "b", "C": "c", "Y": "co"})]
    return NetGraph(nets, cells, name="fa")


def test_fused_cell_times_each_arc():
    base = default_library()
    fa = FusedCellDef("FC0", "fa", _full_adder(), ("a", "b", "c"), ("s", "co"))
    record = fused_base_record(fa, base)
    xor, maj = base.get("XOR2x2").delay, base.get("MAJx1").delay
    discount = get_tech_factors().fusion["delay_discount"]
    assert record.delay == pytest.approx(discount * max(2 * xor, maj))
    assert record.arc_delay("I0", "Y0") == pytest.approx(discount * 2 * xor)
    assert record.arc_delay("I2", "Y0") == pytest.approx(discount * xor)
    assert record.arc_delay("I2", "Y1") == pytest.approx(discount * maj)

    # two fused adders in a ripple; the carry chain uses the short carry arc
    nets = [Net(n, NetKind.INPUT) for n in ("a0", "b0", "a1", "b1", "cin")]
    nets += [Net("s0", NetKind.OUTPUT), Net("c0"), Net("s1", NetKind.OUTPUT), Net("c1", NetKind.OUTPUT)]
    cells = [Cell("fa0", "FC0", {"I0": "a0", "I1": "b0", "I2": "cin", "Y0": "s0", "Y1": "c0"}),
             Cell("fa1", "FC0", {"I0": "a1", "I1": "b1", "I2": "c0", "Y0": "s1", "Y1": "c1"})]
    lib = CellLibrary({**base.cells, "FC0": record}, {"FC0": fa})
    report = static_timing(NetGraph(nets, cells), lib)
    assert report.critical_delay == pytest.approx(discount * max(2 * xor, maj + xor, 2 * maj))
    assert report.through_delay["fa0"] == pytest.approx(report.critical_delay)


def test_fusion_never_lengthens_the_critical_path():
    pe = generate_pe("WT", "SK", 3)
    definitions = make_fused_definitions(select_fusion_candidates(fusible_patterns(mine_subcircuits(pe)), 2))
    lib = extend_with_fused(default_library(), definitions)
    fused = apply_fusion(pe, definitions)
    assert len(fused) < len(pe)
    assert static_timing(fused, lib).critical_delay <= static_timing(pe, lib).critical_delay + 1e-12


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
