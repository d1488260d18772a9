#!/usr/bin/env python3
"""
Inter-loop analysis: cell contributions, frontier anchors and PPA directions
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from app.utils.errors import DegenerateGeometryError, InvalidInputError
from app.utils.interloop import (
    DirectionWeights,
    cell_contributions,
    find_anchors,
    frontier_2d,
    power_area_correlation,
    power_contribution,
    ppa_direction,
    timing_contribution,
    uniform_contribution,
)
from app.utils.library import default_library
from app.utils.macgen import generate_mac_array
from app.utils.netlist import Cell, Net, NetGraph, NetKind
from app.utils.sta import static_timing

FRONT = [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)]


def _pair():
    nets = [Net("a", NetKind.INPUT), Net("y1", NetKind.OUTPUT), Net("y2", NetKind.OUTPUT)]
    cells = [Cell("u1", "INVx1", {"A": "a", "Y": "y1"}), Cell("u2", "BUFx2", {"A": "a", "Y": "y2"})]
    return NetGraph(nets, cells)


def test_timing_contribution_example():
    print("🧪 timing contribution weights")
    w = timing_contribution(_pair(), {"u1": 0.1, "u2": 0.2}, lam=10.0)
    assert w["INVx1"] == pytest.approx(0.269, abs=1e-3)
    assert w["BUFx2"] == pytest.approx(0.731, abs=1e-3)
    print("✅ timing contribution weights")


def test_single_cell_type_takes_all_weight():
    g = NetGraph([Net("a", NetKind.INPUT), Net("y", NetKind.OUTPUT)], [Cell("u", "INVx1", {"A": "a", "Y": "y"})])
    lib = default_library()
    contrib = cell_contributions(g, lib, static_timing(g, lib))
    assert contrib.w_power == {"INVx1": pytest.approx(1.0)}
    assert contrib.w_delay == {"INVx1": pytest.approx(1.0)}


def test_contributions_are_distributions():
    g = generate_mac_array("WT", "SK", 1, 1, 4)
    lib = default_library()
    contrib = cell_contributions(g, lib, static_timing(g, lib))
    assert sum(contrib.w_power.values()) == pytest.approx(1.0)
    assert sum(contrib.w_delay.values()) == pytest.approx(1.0)
    assert all(v >= 0 for v in contrib.w_power.values())
    assert "DFFx1" in contrib.w_power and "DFFx1" not in contrib.w_delay
    power = power_contribution(g, lib)
    counts = g.cell_type_counts()
    total = sum(lib.get(t).power * n for t, n in counts.items())
    assert power["AND2x2"] == pytest.approx(lib.get("AND2x2").power * counts["AND2x2"] / total)


def test_lambda_controls_concentration():
    g = generate_mac_array("DT", "KS", 1, 1, 4)
    lib = default_library()
    flat = timing_contribution(g, static_timing(g, lib), lam=1e-6)
    counts = g.cell_type_counts()
    comb = sum(n for t, n in counts.items() if t != "DFFx1")
    for t, w in flat.items():
        assert w == pytest.approx(counts[t] / comb, rel=1e-3)
    sharp = timing_contribution(_pair(), {"u1": 0.1, "u2": 0.2}, lam=500.0)
    assert sharp["BUFx2"] == pytest.approx(1.0)


def test_uniform_and_invalid_lambda():
    g = _pair()
    naive = uniform_contribution(g)
    assert naive.w_power == {"BUFx2": 0.5, "INVx1": 0.5}
    with pytest.raises(InvalidInputError):
        timing_contribution(g, {"u1": 0.1, "u2": 0.2}, lam=0.0)
    with pytest.raises(InvalidInputError):
        timing_contribution(g, {"u1": 0.1}, lam=1.0)


def test_direction_at_symmetric_knee():
    print("🧪 PPA direction from the local frontier")
    w = ppa_direction(FRONT, 1, k=2)
    assert w.w_delay == pytest.approx(math.sqrt(2) / 2)
    assert w.w_power == pytest.approx(math.sqrt(2) / 2)
    assert w.anchor == (0.5, 0.5)
    print("✅ PPA direction from the local frontier")


def test_direction_is_unit_norm_and_translation_invariant():
    rng = np.random.default_rng(8)
    x = np.sort(rng.random(9))
    pts = np.column_stack([x, 1.0 / (x + 0.3)])
    for i in range(len(pts)):
        w = ppa_direction(pts, i, k=3)
        assert np.linalg.norm(w.as_array()) == pytest.approx(1.0)
        assert w.w_delay >= 0 and w.w_power >= 0
        shifted = ppa_direction(pts + 0.25, i, k=3)
        np.testing.assert_allclose(shifted.as_array(), w.as_array(), atol=1e-9)


def test_direction_rejects_degenerate_input():
    with pytest.raises(InvalidInputError):
        ppa_direction(FRONT[:2], 0, k=2)
    with pytest.raises(DegenerateGeometryError):
        ppa_direction([(0.5, 0.5), (0.3, 0.3), (0.3, 0.3)], 0, k=2)


def test_direction_weights_round_trip_validation():
    w = DirectionWeights.from_dict({"w_delay": 0.6, "w_power": 0.8, "anchor": [0.1, 0.2]})
    assert w.to_dict() == {"w_delay": 0.6, "w_power": 0.8, "anchor": [0.1, 0.2]}
    with pytest.raises(InvalidInputError):
        DirectionWeights.from_dict({"w_delay": 0.5, "w_power": 0.5})
    with pytest.raises(InvalidInputError):
        DirectionWeights.from_dict({"w_delay": -0.6, "w_power": 0.8})


def test_frontier_anchors():
    front = frontier_2d([(0.8, 0.2, 1.0), (0.5, 0.5, 1.0), (0.2, 0.8, 1.0), (0.9, 0.9, 1.0), (0.5, 0.5, 2.0)])
    np.testing.assert_allclose(front, [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)])
    assert find_anchors(front) == {"knee": 1, "low_delay": 0}
    # a single point is both anchors
    assert find_anchors(np.array([(0.3, 0.3)])) == {"knee": 0}


def test_power_area_correlation():
    assert power_area_correlation([(1, 1, 2), (1, 2, 4), (1, 3, 6)]) == pytest.approx(1.0)
    assert power_area_correlation([(1, 1, 2), (1, 1, 4)]) is None


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
