"""Pin-level circuit graphs.

Nodes are device-pin tokens ("NM1D"), terminal tokens ("VDD", "VIN1") and,
after pattern substitution, subcircuit interface tokens ("SG1VDD",
"SG2termA").  Device-level hub nodes do not exist: each device's pins are
joined in a cycle (a single edge for 2-pin devices), and every net becomes
a star centered on an anchor node instead of a pairwise clique.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

from .errors import InvalidCircuit
from .netlist import (
    Circuit,
    KIND_PREFIX,
    KIND_ROLES,
    PREFIX_KIND_LABEL,
    is_terminal_net,
    terminal_prefix,
)

_PIN_RE = re.compile(r"^(NM|PM|Q|R|C|L|D)([0-9]+)([A-Z])$")
_SG_RE = re.compile(r"^SG([0-9]+)(VDD|VSS|GND|VOUT|VIN|VB|IB|term[A-Z])([0-9]*)$")

PREFIX_ROLES = {
    "NM": ("D", "G", "S", "B"),
    "PM": ("D", "G", "S", "B"),
    "Q": ("C", "B", "E"),
    "R": ("A", "B"),
    "C": ("A", "B"),
    "L": ("A", "B"),
    "D": ("A", "B"),
}


def pin_token(device_id: str, role: str) -> str:
    return device_id + role


@dataclass(frozen=True)
class TokenInfo:
    category: str  # "pin" | "terminal" | "subcircuit"
    device_id: str | None = None
    role: str | None = None
    prefix: str | None = None  # device id prefix or terminal prefix
    pattern_id: str | None = None


def classify_token(token: str):
    """Classify a node token; returns TokenInfo or None if unrecognized."""
    if is_terminal_net(token):
        return TokenInfo("terminal", prefix=terminal_prefix(token))
    m = _SG_RE.match(token)
    if m:
        return TokenInfo("subcircuit", role=m.group(2) + m.group(3), pattern_id="SG" + m.group(1))
    m = _PIN_RE.match(token)
    if m:
        prefix, num, role = m.groups()
        if role in PREFIX_ROLES[prefix]:
            return TokenInfo("pin", device_id=prefix + num, role=role, prefix=prefix)
    return None


def node_label(token: str) -> str:
    """Structural label used for mining and isomorphism (ids stripped)."""
    if "::" in token:  # materialized pattern-expansion node
        return token.split("::", 2)[2]
    info = classify_token(token)
    if info is None:
        return token
    if info.category == "terminal":
        return info.prefix
    if info.category == "subcircuit":
        return f"{info.pattern_id}.{info.role}"
    return f"{PREFIX_KIND_LABEL[info.prefix]}.{info.role}"


def _pair(u: str, v: str) -> tuple[str, str]:
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class CircuitGraph:
    """Undirected multigraph over node tokens.

    ``edges`` is a multiset of sorted pairs; parallel edges only appear
    after eulerization duplicates them.
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    origin: str = ""
    substitutions: tuple = field(default=(), compare=False)

    @staticmethod
    def from_edges(edges, nodes=(), origin: str = "", substitutions=()) -> "CircuitGraph":
        pairs = tuple(sorted(_pair(u, v) for u, v in edges))
        node_set = {u for e in pairs for u in e} | set(nodes)
        return CircuitGraph(tuple(sorted(node_set)), pairs, origin, tuple(substitutions))

    @property
    def simple_edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.edges)

    def degrees(self) -> dict[str, int]:
        deg = {n: 0 for n in self.nodes}
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        adj = self.adjacency()
        seen = {self.nodes[0]}
        queue = deque([self.nodes[0]])
        while queue:
            for w in adj[queue.popleft()]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == len(self.nodes)


def device_cycle_pairs(dev) -> list[tuple[str, str]]:
    """Internal pin-cycle pairs of one device (single edge for 2-pin kinds)."""
    toks = [pin_token(dev.id, role) for role, _ in dev.pins]
    if len(toks) == 2:
        return [_pair(toks[0], toks[1])]
    return [_pair(toks[i], toks[(i + 1) % len(toks)]) for i in range(len(toks))]


def net_star_pairs(circuit: Circuit) -> dict[str, list[tuple[str, str]]]:
    """Per net: the anchor-to-member star pairs.

    The anchor is the terminal node when the net is a terminal, otherwise
    the lexicographically smallest member pin token.
    """
    stars: dict[str, list[tuple[str, str]]] = {}
    for net, members in circuit.nets.items():
        pins = sorted(pin_token(d, r) for d, r in members)
        if is_terminal_net(net):
            anchor, rest = net, pins
        else:
            anchor, rest = pins[0], pins[1:]
        stars[net] = [_pair(anchor, m) for m in rest]
    return stars


def build_pin_graph(circuit: Circuit) -> CircuitGraph:
    """Pin-level graph with device cycles and per-net stars.

    Coinciding cycle/star pairs (e.g. a diode-connected transistor whose
    tied pins anchor their net) collapse to a single edge, so the result
    never contains parallel edges.
    """
    if not circuit.devices:
        raise InvalidCircuit("circuit has no devices")
    ids = [d.id for d in circuit.devices]
    if len(set(ids)) != len(ids):
        raise InvalidCircuit("duplicate device ids")

    pairs: set[tuple[str, str]] = set()
    nodes: set[str] = set()
    for dev in circuit.devices:
        nodes.update(pin_token(dev.id, role) for role, _ in dev.pins)
        pairs.update(device_cycle_pairs(dev))
    for net, star in net_star_pairs(circuit).items():
        if is_terminal_net(net):
            nodes.add(net)
        pairs.update(star)
    return CircuitGraph(tuple(sorted(nodes)), tuple(sorted(pairs)), origin=circuit.name)


def edge_savings(circuit: Circuit) -> tuple[int, int]:
    """(pruned, naive) edge counts.

    The naive count models the legacy representation: a device hub node
    with spokes to its pins, all pin pairs inside a device, and a pairwise
    clique over each net's member nodes.
    """
    pruned = len(build_pin_graph(circuit).edges)
    naive = 0
    for dev in circuit.devices:
        k = len(dev.pins)
        naive += k * (k - 1) // 2 + k
    for net, members in circuit.nets.items():
        n = len(members) + (1 if is_terminal_net(net) else 0)
        naive += n * (n - 1) // 2
    return pruned, naive


def dump_graph(graph: CircuitGraph) -> str:
    """Text dump: '# nodes: ...' header then one 'u v' line per edge."""
    lines = [f"# origin: {graph.origin}", "# nodes: " + " ".join(graph.nodes)]
    lines += [f"{u} {v}" for u, v in graph.edges]
    return "\n".join(lines) + "\n"
