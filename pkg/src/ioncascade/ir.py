"""Line-oriented text format for circuits.

One instruction per line: ``GATE ion [ion] [angle ...]``. ``#`` starts a
comment, ``IONS n`` fixes the chain length and a line holding only ``---``
starts the next circuit of a batch. Angles are arithmetic expressions in
``pi``, e.g. ``-pi/2`` or ``3*pi/4``.
"""
from __future__ import annotations

import ast
import itertools
import math
import operator
from typing import Sequence

from .compiler import GATE_ARITY, CircuitError, CircuitIR, Gate

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi}
_FUNCS = {"sqrt": math.sqrt}


class ParseError(CircuitError):
    pass


def _eval(node: ast.AST) -> float:
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval(node.operand))
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        return _FUNCS[node.func.id](_eval(node.args[0]))
    raise ValueError("unsupported expression")


def parse_angle(text: str) -> float:
    """Evaluate an angle such as ``pi/2`` without ``eval``."""
    try:
        value = _eval(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError, TypeError) as exc:
        raise ValueError(f"bad angle {text!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"angle {text!r} is not finite")
    return value


def _parse_line(tokens: list[str], lineno: int) -> Gate:
    name = tokens[0].upper()
    if name not in GATE_ARITY:
        raise ParseError(f"unknown gate {tokens[0]!r}", line=lineno)
    nq, npar = GATE_ARITY[name]
    args = tokens[1:]
    if len(args) != nq + npar:
        raise ParseError(
            f"{name} expects {nq} ion(s) and {npar} angle(s), got {len(args)} argument(s)",
            line=lineno,
        )
    try:
        qubits = tuple(int(a) for a in args[:nq])
    except ValueError:
        raise ParseError("ion indices must be integers", line=lineno) from None
    try:
        params = tuple(parse_angle(a) for a in args[nq:])
    except ValueError as exc:
        raise ParseError(str(exc), line=lineno) from None
    return Gate(name, qubits, params, lineno)


def parse_batch(text: str, n_qubits: int | None = None) -> list[CircuitIR]:
    """Parse one or more circuits; every circuit is validated.

    The chain length comes from ``IONS``, else ``n_qubits``, else the
    largest ion index used.
    """
    blocks: list[list[Gate]] = [[]]
    declared = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "---":
            blocks.append([])
            continue
        tokens = line.replace(",", " ").split()
        if tokens[0].upper() == "IONS":
            if len(tokens) != 2 or not tokens[1].isdigit() or int(tokens[1]) < 1:
                raise ParseError("IONS takes one positive integer", line=lineno)
            n = int(tokens[1])
            if declared is not None and n != declared:
                raise ParseError("conflicting IONS declaration", line=lineno)
            declared = n
            continue
        blocks[-1].append(_parse_line(tokens, lineno))
    if len(blocks) > 1 and not blocks[-1]:
        blocks.pop()
    n = declared or n_qubits
    if n is None:
        used = [q for b in blocks for g in b for q in g.qubits]
        n = max(used) + 1 if used else 1
    circuits = []
    for b in blocks:
        ir = CircuitIR(n, b)
        circuits.append(ir.validate())
    return circuits


def parse(text: str, n_qubits: int | None = None) -> CircuitIR:
    circuits = parse_batch(text, n_qubits)
    if len(circuits) != 1:
        raise ParseError(f"expected one circuit, found {len(circuits)}")
    return circuits[0]


def format_circuit(ir: CircuitIR) -> str:
    """Inverse of ``parse`` up to angle formatting."""
    lines = [f"IONS {ir.n_qubits}"]
    for g in ir.gates:
        parts = [g.name, *map(str, g.qubits), *(repr(float(p)) for p in g.params)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def product_preparations(n_qubits: int, gates: Sequence[str] = ("I", "H", "X")) -> list[CircuitIR]:
    """Every assignment of one gate from ``gates`` to each ion."""
    out = []
    for combo in itertools.product(gates, repeat=n_qubits):
        out.append(CircuitIR(n_qubits, [Gate(g.upper(), (q,)) for q, g in enumerate(combo)]).validate())
    return out
