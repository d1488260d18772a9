"""
Structural generator for multiply-accumulate arrays.

Each processing element (PE) is an AND2 partial-product generator, a
Wallace (WT) or Dadda (DT) compressor tree that also absorbs the accumulator
row, and a Sklansky (SK), Kogge-Stone (KS) or Brent-Kung (BK) parallel-prefix
carry-propagate adder. Only basic library cells and DFF registers are used.

Array nets:
    a_r{i}[k]          row operand inputs, forwarded right by pipeline registers
    b_c{j}[k]          column operand inputs, forwarded down
    acc_r{i}_c{j}[k]   accumulator register outputs (graph outputs)
"""

import logging
from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import InvalidInputError, MalformedNetlistError
from .netlist import Cell, Net, NetGraph, NetKind, bus

logger = logging.getLogger(__name__)

CT_TYPES = ("WT", "DT")
CPA_TYPES = ("SK", "KS", "BK")

Bit = Optional[str]  # None is a constant 0


class _Builder:
    """Accumulates gates, folds constant-0 operands and prunes dead logic"""

    def __init__(self):
        self.nets: Dict[str, NetKind] = {}
        self.cells: Dict[str, Tuple[str, Dict[str, str]]] = {}
        self.full_adders = 0
        self.half_adders = 0
        self._net_count = 0

    def input(self, nid: str) -> str:
        self.nets[nid] = NetKind.INPUT
        return nid

    def gate(self, cell_type: str, **pins: str) -> str:
        out = f"n{self._net_count}"
        self._net_count += 1
        self.nets[out] = NetKind.INTERNAL
        self.cells[f"u{len(self.cells)}"] = (cell_type, {**pins, "Y": out})
        return out

    def and2(self, a: Bit, b: Bit) -> Bit:
        if a is None or b is None:
            return None
        return self.gate("AND2x2", A=a, B=b)

    def xor2(self, a: Bit, b: Bit) -> Bit:
        if a is None:
            return b
        if b is None:
            return a
        return self.gate("XOR2x2", A=a, B=b)

    def ao21(self, a1: Bit, a2: Bit, b: Bit) -> Bit:
        """b | (a1 & a2)"""
        if a1 is None or a2 is None:
            return b
        if b is None:
            return self.and2(a1, a2)
        return self.gate("AO21x1", A1=a1, A2=a2, B=b)

    def half_adder(self, a: Bit, b: Bit) -> Tuple[Bit, Bit]:
        if a is None or b is None:
            return (b if a is None else a), None
        self.half_adders += 1
        return self.xor2(a, b), self.and2(a, b)

    def full_adder(self, a: Bit, b: Bit, c: Bit) -> Tuple[Bit, Bit]:
        present = [x for x in (a, b, c) if x is not None]
        if len(present) < 3:
            return self.half_adder(*(present + [None] * (2 - len(present)))[:2])
        self.full_adders += 1
        s = self.xor2(self.xor2(a, b), c)
        return s, self.gate("MAJx1", A=a, B=b, C=c)

    def buffer(self, a: str) -> str:
        return self.gate("BUFx2", A=a)

    def build(self, outputs: Dict[str, str], name: str, attrs: Dict) -> NetGraph:
        """
        Drop cells that feed nothing, then emit a NetGraph whose Output nets
        are renamed per `outputs` (builder net -> output name).
        """
        loads: Dict[str, int] = {nid: 0 for nid in self.nets}
        for _, pins in self.cells.values():
            for pin, nid in pins.items():
                if pin != "Y":
                    loads[nid] += 1
        keep = set(outputs)
        alive = dict(self.cells)
        driver = {pins["Y"]: cid for cid, (_, pins) in alive.items()}
        queue = deque(cid for cid, (_, pins) in alive.items() if loads[pins["Y"]] == 0 and pins["Y"] not in keep)
        while queue:
            cid = queue.popleft()
            if cid not in alive:
                continue
            _, pins = alive.pop(cid)
            for pin, nid in pins.items():
                if pin == "Y":
                    continue
                loads[nid] -= 1
                src = driver.get(nid)
                if loads[nid] == 0 and nid not in keep and src in alive:
                    queue.append(src)

        rename = dict(outputs)
        used = {nid for _, pins in alive.values() for nid in pins.values()} | set(outputs)
        nets = []
        for nid, kind in self.nets.items():
            if nid not in used:
                continue
            if nid in rename:
                nets.append(Net(rename[nid], NetKind.OUTPUT))
            else:
                nets.append(Net(nid, kind))
        cells = [Cell(cid, ctype, {p: rename.get(n, n) for p, n in pins.items()}) for cid, (ctype, pins) in alive.items()]
        attrs = {**attrs, "full_adders": self.full_adders, "half_adders": self.half_adders}
        return NetGraph(nets, cells, name=name, attrs=attrs)


def _check_choice(value: str, choices: Sequence[str], field: str) -> str:
    normalized = str(value).upper()
    if normalized not in choices:
        raise InvalidInputError(f"{field}={value!r} not in {list(choices)}")
    return normalized


def _wallace(b: _Builder, cols: List[List[str]]) -> List[List[str]]:
    """Greedy column compression: every group of 3 bits gets a FA, a leftover pair a HA"""
    width = len(cols)
    while max(len(c) for c in cols) > 2:
        nxt: List[List[str]] = [[] for _ in range(width)]
        for j, bits in enumerate(cols):
            i = 0
            while len(bits) - i >= 3:
                s, c = b.full_adder(*bits[i:i + 3])
                i += 3
                nxt[j].append(s)
                if j + 1 < width:
                    nxt[j + 1].append(c)
            if len(bits) - i == 2:
                s, c = b.half_adder(bits[i], bits[i + 1])
                i += 2
                nxt[j].append(s)
                if j + 1 < width:
                    nxt[j + 1].append(c)
            nxt[j].extend(bits[i:])
        cols = nxt
    return cols


def _dadda(b: _Builder, cols: List[List[str]]) -> List[List[str]]:
    """Reduce column heights only as far as the next Dadda height 2, 3, 4, 6, 9, 13, ..."""
    width = len(cols)
    heights = [2]
    while heights[-1] < max(len(c) for c in cols):
        heights.append(heights[-1] * 3 // 2)
    for target in reversed(heights[:-1]):
        nxt: List[List[str]] = [[] for _ in range(width)]
        carries: List[List[str]] = [[] for _ in range(width + 1)]
        for j, bits in enumerate(cols):
            i = 0
            h = len(bits) + len(carries[j])
            while h > target and len(bits) - i >= 2:
                if h - target >= 2 and len(bits) - i >= 3:
                    s, c = b.full_adder(*bits[i:i + 3])
                    i += 3
                    h -= 2
                else:
                    s, c = b.half_adder(bits[i], bits[i + 1])
                    i += 2
                    h -= 1
                nxt[j].append(s)
                carries[j + 1].append(c)
            nxt[j].extend(bits[i:])
            nxt[j].extend(carries[j])
        cols = nxt
    return cols


def _prefix_carries(b: _Builder, cpa_type: str, gp: List[Tuple[Bit, Bit]]) -> List[Tuple[Bit, Bit]]:
    """Group (generate, propagate) of every prefix [i:0]"""
    n = len(gp)
    nodes = list(gp)

    def combine(hi, lo):
        g_hi, p_hi = hi
        g_lo, p_lo = lo
        return b.ao21(p_hi, g_lo, g_hi), b.and2(p_hi, p_lo)

    if cpa_type == "KS":
        d = 1
        while d < n:
            nodes = [nodes[i] if i < d else combine(nodes[i], nodes[i - d]) for i in range(n)]
            d *= 2
    elif cpa_type == "SK":
        level = 0
        while (1 << level) < n:
            for i in range(n):
                if (i >> level) & 1:
                    j = ((i >> level) << level) - 1
                    nodes[i] = combine(nodes[i], nodes[j])
            level += 1
    else:
        d = 1
        while d < n:
            for i in range(2 * d - 1, n, 2 * d):
                nodes[i] = combine(nodes[i], nodes[i - d])
            d *= 2
        d = 1
        while d * 2 < n:
            d *= 2
        d //= 2
        while d >= 1:
            for i in range(3 * d - 1, n, 2 * d):
                nodes[i] = combine(nodes[i], nodes[i - d])
            d //= 2
    return nodes


def _carry_propagate(b: _Builder, cpa_type: str, cols: List[List[str]]) -> List[Bit]:
    gp = []
    for bits in cols:
        x = bits[0] if len(bits) > 0 else None
        y = bits[1] if len(bits) > 1 else None
        p, g = b.half_adder(x, y)
        gp.append((g, p))
    prefixes = _prefix_carries(b, cpa_type, gp)
    sums: List[Bit] = [gp[0][1]]
    for j in range(1, len(cols)):
        sums.append(b.xor2(gp[j][1], prefixes[j - 1][0]))
    return sums


def _datapath(b: _Builder, ct_type: str, cpa_type: str, a: List[str], x: List[str],
              acc: Optional[List[str]]) -> List[Bit]:
    width = len(a)
    cols: List[List[str]] = [[] for _ in range(2 * width)]
    for i in range(width):
        for j in range(width):
            cols[i + j].append(b.and2(a[i], x[j]))
    if acc is not None:
        for k, bit in enumerate(acc):
            cols[k].append(bit)
    cols = _wallace(b, cols) if ct_type == "WT" else _dadda(b, cols)
    return _carry_propagate(b, cpa_type, cols)


def _finish(b: _Builder, sums: List[Bit], prefix: str) -> Dict[str, str]:
    """Map sum bits onto distinct, gate-driven output nets"""
    outputs: Dict[str, str] = {}
    for k, bit in enumerate(sums):
        if bit is None:
            raise MalformedNetlistError(f"output bit {k} is constant; width too small")
        if bit in outputs or b.nets.get(bit) is NetKind.INPUT:
            bit = b.buffer(bit)
        outputs[bit] = f"{prefix}[{k}]"
    return outputs


def generate_multiplier(ct_type: str, cpa_type: str, width: int) -> NetGraph:
    """Combinational width x width multiplier: inputs a[k], b[k], outputs p[k]"""
    ct_type = _check_choice(ct_type, CT_TYPES, "ct_type")
    cpa_type = _check_choice(cpa_type, CPA_TYPES, "cpa_type")
    if width < 2:
        raise InvalidInputError(f"width must be >= 2, got {width}")
    b = _Builder()
    a = [b.input(n) for n in bus("a", width)]
    x = [b.input(n) for n in bus("b", width)]
    outputs = _finish(b, _datapath(b, ct_type, cpa_type, a, x, None), "p")
    return b.build(outputs, f"mul_{ct_type}_{cpa_type}_{width}",
                   {"ct_type": ct_type, "cpa_type": cpa_type, "width": width})


def generate_pe(ct_type: str, cpa_type: str, width: int) -> NetGraph:
    """One PE island: inputs a[k], b[k], acc[k]; outputs s[k] = acc + a*b mod 2^(2w)"""
    ct_type = _check_choice(ct_type, CT_TYPES, "ct_type")
    cpa_type = _check_choice(cpa_type, CPA_TYPES, "cpa_type")
    if width < 2:
        raise InvalidInputError(f"width must be >= 2, got {width}")
    b = _Builder()
    a = [b.input(n) for n in bus("a", width)]
    x = [b.input(n) for n in bus("b", width)]
    acc = [b.input(n) for n in bus("acc", 2 * width)]
    outputs = _finish(b, _datapath(b, ct_type, cpa_type, a, x, acc), "s")
    return b.build(outputs, f"pe_{ct_type}_{cpa_type}_{width}",
                   {"ct_type": ct_type, "cpa_type": cpa_type, "width": width})


def _dff(cid: str, d: str, q: str) -> Cell:
    return Cell(cid, "DFFx1", {"D": d, "Q": q})


def generate_mac_array(ct_type: str, cpa_type: str, rows: int, cols: int, width: int,
                       fused: Sequence = ()) -> NetGraph:
    """
    rows x cols systolic MAC array. `fused` optionally lists fused-cell
    definitions applied to the PE before tiling.
    """
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"rows and cols must be >= 1, got {rows}x{cols}")
    pe = generate_pe(ct_type, cpa_type, width)
    if fused:
        from .mining import apply_fusion
        pe = apply_fusion(pe, fused)
    acc_width = 2 * width
    nets: List[Net] = []
    cells: List[Cell] = []
    for i in range(rows):
        nets.extend(Net(n, NetKind.INPUT) for n in bus(f"a_r{i}", width))
    for j in range(cols):
        nets.extend(Net(n, NetKind.INPUT) for n in bus(f"b_c{j}", width))

    for i in range(rows):
        for j in range(cols):
            prefix = f"pe{i}_{j}/"
            a_src = bus(f"a_r{i}", width) if j == 0 else bus(f"a_r{i}_c{j}", width)
            b_src = bus(f"b_c{j}", width) if i == 0 else bus(f"b_r{i}_c{j}", width)
            acc = bus(f"acc_r{i}_c{j}", acc_width)
            sums = [prefix + n for n in bus("s", acc_width)]
            port = {**dict(zip(bus("a", width), a_src)), **dict(zip(bus("b", width), b_src)),
                    **dict(zip(bus("acc", acc_width), acc)), **dict(zip(bus("s", acc_width), sums))}
            for net in pe.nets.values():
                if net.id not in port:
                    nets.append(Net(prefix + net.id, NetKind.INTERNAL))
            nets.extend(Net(n, NetKind.INTERNAL) for n in sums)
            nets.extend(Net(n, NetKind.OUTPUT) for n in acc)
            for cell in pe.cells.values():
                cells.append(Cell(prefix + cell.id, cell.type,
                                  {p: port.get(n, prefix + n) for p, n in cell.pins.items()}))
            for k in range(acc_width):
                cells.append(_dff(f"acc_r{i}_c{j}_reg{k}", sums[k], acc[k]))
            if j + 1 < cols:
                fwd = bus(f"a_r{i}_c{j + 1}", width)
                nets.extend(Net(n, NetKind.INTERNAL) for n in fwd)
                cells.extend(_dff(f"a_r{i}_c{j + 1}_reg{k}", a_src[k], fwd[k]) for k in range(width))
            if i + 1 < rows:
                fwd = bus(f"b_r{i + 1}_c{j}", width)
                nets.extend(Net(n, NetKind.INTERNAL) for n in fwd)
                cells.extend(_dff(f"b_r{i + 1}_c{j}_reg{k}", b_src[k], fwd[k]) for k in range(width))

    attrs = {**pe.attrs, "rows": rows, "cols": cols, "islands": rows * cols,
             "pe_cells": len(pe), "fused": [d.name for d in fused]}
    g = NetGraph(nets, cells, name=f"mac_{pe.attrs['ct_type']}_{pe.attrs['cpa_type']}_{rows}x{cols}x{width}",
                 attrs=attrs)
    logger.info(f"Generated {g.name}: {len(g)} cells ({len(pe)} per PE)")
    return g
