"""
Logic behaviour and pin roles of the basic standard cells.

Cell types carry a drive-strength suffix (AND2x2, INVx4, ...); behaviour
depends on the base name only. Output pins are `Y`, `Q` (registers) or
`Y0`, `Y1`, ... (fused cells); every other pin is an input.
"""

import re
from typing import Callable, Dict, Mapping, Tuple

from .errors import InvalidInputError

REGISTER_BASES = frozenset({"DFF"})

_DRIVE_SUFFIX = re.compile(r"^(?P<base>.+?)(x\d+)?$")
_FUSED_OUTPUT = re.compile(r"^Y\d+$")


def _maj(v):
    return (v["A"] & v["B"]) | (v["A"] & v["C"]) | (v["B"] & v["C"])


# base -> (input pins, pin roles, function of {pin: value} returning the Y value)
_BASIC: Dict[str, Tuple[Tuple[str, ...], Dict[str, str], Callable]] = {
    "INV": (("A",), {"A": "A"}, lambda v: ~v["A"]),
    "BUF": (("A",), {"A": "A"}, lambda v: v["A"]),
    "AND2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: v["A"] & v["B"]),
    "NAND2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: ~(v["A"] & v["B"])),
    "OR2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: v["A"] | v["B"]),
    "NOR2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: ~(v["A"] | v["B"])),
    "XOR2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: v["A"] ^ v["B"]),
    "XNOR2": (("A", "B"), {"A": "in", "B": "in"}, lambda v: ~(v["A"] ^ v["B"])),
    "AND3": (("A", "B", "C"), {"A": "in", "B": "in", "C": "in"}, lambda v: v["A"] & v["B"] & v["C"]),
    "NAND3": (("A", "B", "C"), {"A": "in", "B": "in", "C": "in"}, lambda v: ~(v["A"] & v["B"] & v["C"])),
    "OR3": (("A", "B", "C"), {"A": "in", "B": "in", "C": "in"}, lambda v: v["A"] | v["B"] | v["C"]),
    "MAJ": (("A", "B", "C"), {"A": "in", "B": "in", "C": "in"}, _maj),
    "AO21": (("A1", "A2", "B"), {"A1": "A", "A2": "A", "B": "B"}, lambda v: (v["A1"] & v["A2"]) | v["B"]),
    "AOI21": (("A1", "A2", "B"), {"A1": "A", "A2": "A", "B": "B"}, lambda v: ~((v["A1"] & v["A2"]) | v["B"])),
    "OA21": (("A1", "A2", "B"), {"A1": "A", "A2": "A", "B": "B"}, lambda v: (v["A1"] | v["A2"]) & v["B"]),
    "AO22": (("A1", "A2", "B1", "B2"), {"A1": "A", "A2": "A", "B1": "B", "B2": "B"},
             lambda v: (v["A1"] & v["A2"]) | (v["B1"] & v["B2"])),
    "OA22": (("A1", "A2", "B1", "B2"), {"A1": "A", "A2": "A", "B1": "B", "B2": "B"},
             lambda v: (v["A1"] | v["A2"]) & (v["B1"] | v["B2"])),
    "DFF": (("D",), {"D": "D"}, lambda v: v["D"]),
}


def base_type(cell_type: str) -> str:
    return _DRIVE_SUFFIX.match(cell_type).group("base")


def is_output_pin(pin: str) -> bool:
    return pin in ("Y", "Q") or bool(_FUSED_OUTPUT.match(pin))


def is_register(cell_type: str) -> bool:
    return base_type(cell_type) in REGISTER_BASES


def is_basic(cell_type: str) -> bool:
    return base_type(cell_type) in _BASIC


def input_pins(cell_type: str) -> Tuple[str, ...]:
    base = base_type(cell_type)
    if base not in _BASIC:
        raise InvalidInputError(f"unknown basic cell type {cell_type}")
    return _BASIC[base][0]


def output_pins(cell_type: str) -> Tuple[str, ...]:
    return ("Q",) if is_register(cell_type) else ("Y",)


def pin_role(cell_type: str, pin: str) -> str:
    """Symmetric inputs share a role; fused-cell ports are their own role"""
    base = base_type(cell_type)
    if base in _BASIC:
        return _BASIC[base][1].get(pin, pin)
    return pin


def evaluate(cell_type: str, values: Mapping[str, object]):
    """Output value of a basic cell for the given input values (bools or numpy bool arrays)"""
    base = base_type(cell_type)
    if base not in _BASIC:
        raise InvalidInputError(f"no logic function for cell type {cell_type}")
    return _BASIC[base][2](values)
