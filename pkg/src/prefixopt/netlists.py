"""Gate-level adder netlists generated from prefix graphs.

The emitted file is a plain-text structural netlist restricted to
two-input cells plus inverters and buffers.  Per input bit a
generate/propagate pair is computed, every non-input graph node becomes
one prefix-operator cell group, and each sum bit is a final XOR against
the group generate one position down.  Two emission modes share this
structure:

* ``simple`` (default): monotone AND/OR/XOR logic.
* ``inverting``: alternating-polarity logic in NAND/NOR/XOR/XNOR/INV
  cells.  Group terms at even logic levels are stored complemented and at
  odd levels in true form; inverters patch parents whose level parity does
  not match what a consumer expects.  This documents its own polarity
  convention rather than following any particular library mapping.

The header comment carries the graph width, canonical key, serialized
node list, and the exact cell accounting.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graphs import Node, PrefixGraph

SIMPLE = "simple"
INVERTING = "inverting"

# out = f(inputs); arity fixed per type
GATE_FUNCS = {
    "BUF": lambda a: a,
    "INV": lambda a: 1 - a,
    "AND2": lambda a, b: a & b,
    "OR2": lambda a, b: a | b,
    "XOR2": lambda a, b: a ^ b,
    "XNOR2": lambda a, b: 1 - (a ^ b),
    "NAND2": lambda a, b: 1 - (a & b),
    "NOR2": lambda a, b: 1 - (a | b),
}


class SimulationError(RuntimeError):
    """Undriven net, unknown cell, or malformed netlist during evaluation."""


@dataclass(frozen=True)
class Gate:
    type: str
    output: str
    inputs: tuple[str, ...]


@dataclass(frozen=True)
class Netlist:
    """Structural combinational netlist with gates in topological order."""

    name: str
    n: int
    mode: str
    header: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    gates: tuple[Gate, ...]

    def text(self) -> str:
        lines = [f"# {h}" for h in self.header]
        lines.append(f"module {self.name}")
        lines.append("inputs " + " ".join(self.inputs))
        lines.append("outputs " + " ".join(self.outputs))
        for gate in self.gates:
            lines.append(f"gate {gate.type} {gate.output} " + " ".join(gate.inputs))
        lines.append("endmodule")
        return "\n".join(lines) + "\n"


class _Builder:
    def __init__(self):
        self.gates: list[Gate] = []
        self.driven: set[str] = set()

    def emit(self, gtype: str, out: str, *ins: str) -> str:
        if out in self.driven:
            raise ValueError(f"net {out} driven twice")
        self.driven.add(out)
        self.gates.append(Gate(gtype, out, tuple(ins)))
        return out


def emit(g: PrefixGraph, mode: str = SIMPLE, name: str | None = None) -> Netlist:
    """Deterministic netlist for the adder defined by a legal prefix graph."""
    g.require_legal()
    if mode not in (SIMPLE, INVERTING):
        raise ValueError(f"unknown netlist mode {mode!r}")
    n = g.n
    name = name or f"prefix_adder_n{n}"
    # Level-ascending node order (ties by coordinate) is topological: both
    # parents of a node sit at strictly lower levels.
    order = sorted((node for node in g.nodes if not g.is_input(node)),
                   key=lambda v: (g.levels[v], v))
    b = _Builder()
    if mode == SIMPLE:
        _emit_simple(g, order, b)
    else:
        _emit_inverting(g, order, b)

    prefix_cells = len(order)
    header = (
        f"prefix adder netlist ({mode} mode)",
        f"n: {n}",
        f"key: {g.key}",
        f"graph: {g.to_json()}",
        f"cells: preprocess={n} prefix={prefix_cells} sum={n + 1} gates={len(b.gates)}",
    )
    return Netlist(
        name=name,
        n=n,
        mode=mode,
        header=header,
        inputs=tuple(f"a{i}" for i in range(n)) + tuple(f"b{i}" for i in range(n)),
        outputs=tuple(f"s{i}" for i in range(n + 1)),
        gates=tuple(b.gates),
    )


def _gnet(v: Node) -> str:
    return f"g{v[0]}_{v[1]}"


def _pnet(v: Node) -> str:
    return f"p{v[0]}_{v[1]}"


def _emit_simple(g: PrefixGraph, order: list[Node], b: _Builder) -> None:
    n = g.n
    for i in range(n):
        b.emit("AND2", _gnet((i, i)), f"a{i}", f"b{i}")
        b.emit("XOR2", _pnet((i, i)), f"a{i}", f"b{i}")
    for v in order:
        up, lp = g.parents[v]
        t = b.emit("AND2", f"t{v[0]}_{v[1]}", _pnet(up), _gnet(lp))
        b.emit("OR2", _gnet(v), _gnet(up), t)
        if v[1] > 0:  # group propagate of lsb-0 nodes is never consumed
            b.emit("AND2", _pnet(v), _pnet(up), _pnet(lp))
    b.emit("BUF", "s0", _pnet((0, 0)))
    for i in range(1, n):
        b.emit("XOR2", f"s{i}", _pnet((i, i)), _gnet((i - 1, 0)))
    b.emit("BUF", f"s{n}", _gnet((n - 1, 0)))


def _emit_inverting(g: PrefixGraph, order: list[Node], b: _Builder) -> None:
    # Polarity convention: nodes at even level store (gb, pb) = complements,
    # odd levels store true (g, p).  Preprocessing (level 0) is NAND/XNOR.
    n = g.n
    inverted = {}  # node -> True if stored complemented

    for i in range(n):
        b.emit("NAND2", _gnet((i, i)), f"a{i}", f"b{i}")
        b.emit("XNOR2", _pnet((i, i)), f"a{i}", f"b{i}")
        inverted[(i, i)] = True

    flipped: dict[tuple[Node, str], str] = {}

    def fetch(parent: Node, want_inverted: bool, which: str) -> str:
        """Net holding `which` ('g' or 'p') of a parent at the wanted polarity."""
        net = _gnet(parent) if which == "g" else _pnet(parent)
        if inverted[parent] == want_inverted:
            return net
        cached = flipped.get((parent, which))
        if cached is None:
            cached = b.emit("INV", f"{which}x{parent[0]}_{parent[1]}", net)
            flipped[(parent, which)] = cached
        return cached

    for v in order:
        up, lp = g.parents[v]
        consume_inverted = g.levels[v] % 2 == 1  # odd levels consume complements
        gu = fetch(up, consume_inverted, "g")
        pu = fetch(up, consume_inverted, "p")
        gl = fetch(lp, consume_inverted, "g")
        tnet = f"t{v[0]}_{v[1]}"
        if consume_inverted:
            # true G = NAND(OR(pb_u, gb_l), gb_u); true P = NOR(pb_u, pb_l)
            t = b.emit("OR2", tnet, pu, gl)
            b.emit("NAND2", _gnet(v), t, gu)
            if v[1] > 0:
                pl = fetch(lp, True, "p")
                b.emit("NOR2", _pnet(v), pu, pl)
            inverted[v] = False
        else:
            # complement G = NOR(AND(p_u, g_l), g_u); complement P = NAND(p_u, p_l)
            t = b.emit("AND2", tnet, pu, gl)
            b.emit("NOR2", _gnet(v), t, gu)
            if v[1] > 0:
                pl = fetch(lp, False, "p")
                b.emit("NAND2", _pnet(v), pu, pl)
            inverted[v] = True

    b.emit("INV", "s0", _pnet((0, 0)))
    for i in range(1, n):
        carry = (i - 1, 0)
        # pb_i XOR g = p_i XNOR g; with complemented carry the XOR flips back
        if inverted[carry]:
            b.emit("XOR2", f"s{i}", _pnet((i, i)), _gnet(carry))
        else:
            b.emit("XNOR2", f"s{i}", _pnet((i, i)), _gnet(carry))
    top = (n - 1, 0)
    if inverted[top]:
        b.emit("INV", f"s{n}", _gnet(top))
    else:
        b.emit("BUF", f"s{n}", _gnet(top))


# -- parsing and simulation ---------------------------------------------------


def parse(text: str) -> Netlist:
    """Parse the structural netlist text format produced by :func:`emit`."""
    header: list[str] = []
    name = ""
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    gates: list[Gate] = []
    saw_end = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header.append(line[1:].strip())
            continue
        tokens = line.split()
        kw = tokens[0]
        if kw == "module":
            name = tokens[1]
        elif kw == "inputs":
            inputs = tuple(tokens[1:])
        elif kw == "outputs":
            outputs = tuple(tokens[1:])
        elif kw == "gate":
            gates.append(Gate(tokens[1], tokens[2], tuple(tokens[3:])))
        elif kw == "endmodule":
            saw_end = True
        else:
            raise SimulationError(f"unknown netlist line {line!r}")
    if not name or not saw_end:
        raise SimulationError("netlist missing module/endmodule")
    n = sum(1 for p in inputs if p.startswith("a"))
    mode = INVERTING if "inverting" in " ".join(header) else SIMPLE
    return Netlist(name, n, mode, tuple(header), inputs, outputs, tuple(gates))


def simulate(netlist: Netlist | str, a: int, b: int) -> int:
    """Evaluate the adder netlist on integer operands, returning a + b.

    The result includes the carry-out bit.  Raises SimulationError for
    undriven nets or operands that do not fit in n bits.
    """
    nl = parse(netlist) if isinstance(netlist, str) else netlist
    n = nl.n
    if not (0 <= a < (1 << n) and 0 <= b < (1 << n)):
        raise ValueError(f"operands must fit in {n} bits")
    values: dict[str, int] = {}
    for i in range(n):
        values[f"a{i}"] = (a >> i) & 1
        values[f"b{i}"] = (b >> i) & 1
    for gate in nl.gates:
        fn = GATE_FUNCS.get(gate.type)
        if fn is None:
            raise SimulationError(f"unknown cell type {gate.type}")
        try:
            ins = [values[net] for net in gate.inputs]
        except KeyError as exc:
            raise SimulationError(f"net {exc.args[0]} read before being driven") from exc
        if gate.output in values:
            raise SimulationError(f"net {gate.output} driven twice")
        values[gate.output] = fn(*ins)
    total = 0
    for i, port in enumerate(nl.outputs):
        if port not in values:
            raise SimulationError(f"output {port} undriven")
        total |= values[port] << i
    return total
