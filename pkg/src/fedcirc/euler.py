"""Graph-to-sequence encoding via the Chinese Postman Problem.

A circuit graph becomes a token stream by duplicating the cheapest edge set
that makes every degree even (minimum-cost matching of odd vertices over
unit-weight shortest paths) and then walking an Eulerian circuit.  A legacy
encoder reproduces the older device-hub representation with naive
eulerization so compression can be measured against it.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DisconnectedGraph,
    EmptySequence,
    NotEulerian,
    SelfLoopToken,
    StartNotInGraph,
    UnknownToken,
)
from .netlist import Circuit, CircuitType, is_terminal_net
from .pingraph import CircuitGraph, build_pin_graph, pin_token

log = logging.getLogger(__name__)

EXACT_MATCHING_LIMIT = 20

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(**kwargs):
        def deco(fn):
            return fn

        return deco


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    closed: bool = False
    circuit_type: CircuitType | None = None

    def __len__(self):
        return len(self.tokens)


def odd_vertices(graph: CircuitGraph) -> set[str]:
    return {n for n, d in graph.degrees().items() if d % 2 == 1}


def _bfs_tree(adj: dict[str, list[str]], source: str):
    """Unit-weight BFS returning (dist, parent); neighbors in sorted order."""
    dist = {source: 0}
    parent: dict[str, str] = {}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in sorted(adj[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


@njit(cache=True)
def _pairing_dp(dist: np.ndarray) -> np.ndarray:  # pragma: no cover - jit body
    k = dist.shape[0]
    full = 1 << k
    dp = np.full(full, np.inf)
    choice = np.full(full, -1, dtype=np.int8)
    dp[0] = 0.0
    for mask in range(2, full):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        for j in range(i + 1, k):
            if (mask >> j) & 1:
                rest = mask & ~(1 << i) & ~(1 << j)
                cand = dp[rest] + dist[i, j]
                if cand < dp[mask]:
                    dp[mask] = cand
                    choice[mask] = j
    return choice


def _pairing_dp_py(dist: np.ndarray) -> np.ndarray:
    k = dist.shape[0]
    full = 1 << k
    dp = np.full(full, np.inf)
    choice = np.full(full, -1, dtype=np.int8)
    dp[0] = 0.0
    for mask in range(2, full):
        i = (mask & -mask).bit_length() - 1
        for j in range(i + 1, k):
            if (mask >> j) & 1:
                rest = mask & ~(1 << i) & ~(1 << j)
                cand = dp[rest] + dist[i, j]
                if cand < dp[mask]:
                    dp[mask] = cand
                    choice[mask] = j
    return choice


def _min_cost_pairing(dist: np.ndarray) -> list[tuple[int, int]]:
    """Exact minimum-cost perfect pairing via bitmask DP (k <= 20)."""
    k = dist.shape[0]
    choice = _pairing_dp(dist) if _HAVE_NUMBA else _pairing_dp_py(dist)
    pairs = []
    mask = (1 << k) - 1
    while mask:
        i = (mask & -mask).bit_length() - 1
        j = int(choice[mask])
        pairs.append((i, j))
        mask &= ~(1 << i) & ~(1 << j)
    return pairs


def _greedy_pairing(dist: np.ndarray) -> list[tuple[int, int]]:
    k = dist.shape[0]
    left = set(range(k))
    pairs = []
    while left:
        best = min(
            ((dist[i, j], i, j) for i in left for j in left if i < j),
            key=lambda t: (t[0], t[1], t[2]),
        )
        _, i, j = best
        pairs.append((i, j))
        left -= {i, j}
    return pairs


def eulerize(graph: CircuitGraph) -> tuple[CircuitGraph, list[tuple[str, str]]]:
    """Duplicate shortest-path edges between matched odd vertices.

    The matching is exact (bitmask pairing DP) up to EXACT_MATCHING_LIMIT
    odd vertices; beyond that a greedy nearest-pair fallback is used and a
    non-optimality warning is logged.
    """
    if not graph.is_connected():
        raise DisconnectedGraph(f"graph {graph.origin!r} is not connected")
    odd = sorted(odd_vertices(graph))
    if not odd:
        return graph, []

    adj = graph.adjacency()
    trees = {v: _bfs_tree(adj, v) for v in odd}
    k = len(odd)
    dist = np.zeros((k, k))
    for a, u in enumerate(odd):
        du = trees[u][0]
        for b, v in enumerate(odd):
            dist[a, b] = du[v]

    if k <= EXACT_MATCHING_LIMIT:
        pairs = _min_cost_pairing(dist)
    else:
        log.warning(
            "%d odd vertices exceeds exact-matching limit %d; using greedy "
            "pairing (duplication may be non-minimal)",
            k,
            EXACT_MATCHING_LIMIT,
        )
        pairs = _greedy_pairing(dist)

    duplicated: list[tuple[str, str]] = []
    for a, b in pairs:
        _, parent = trees[odd[a]]
        node = odd[b]
        while node != odd[a]:
            prev = parent[node]
            duplicated.append((prev, node) if prev <= node else (node, prev))
            node = prev
    multigraph = CircuitGraph(
        graph.nodes,
        tuple(sorted(graph.edges + tuple(duplicated))),
        graph.origin,
        graph.substitutions,
    )
    return multigraph, duplicated


def eulerian_circuit(multigraph: CircuitGraph, start: str, tiebreak_seed: int = 0) -> TokenSequence:
    """Hierholzer walk covering every multigraph edge exactly once.

    Neighbor order is lexicographic for tiebreak_seed 0 and a seeded
    shuffle otherwise, so walks are reproducible.
    """
    if start not in multigraph.nodes:
        raise StartNotInGraph(start)
    if any(d % 2 for d in multigraph.degrees().values()):
        raise NotEulerian(f"graph {multigraph.origin!r} has odd-degree vertices")
    if not multigraph.is_connected():
        raise DisconnectedGraph(multigraph.origin)

    incident: dict[str, list[tuple[str, int]]] = {n: [] for n in multigraph.nodes}
    for eid, (u, v) in enumerate(multigraph.edges):
        incident[u].append((v, eid))
        incident[v].append((u, eid))
    if tiebreak_seed == 0:
        for lst in incident.values():
            lst.sort()
    else:
        rng = np.random.default_rng(tiebreak_seed)
        for node in multigraph.nodes:
            lst = incident[node]
            incident[node] = [lst[i] for i in rng.permutation(len(lst))]

    used = [False] * len(multigraph.edges)
    cursor = {n: 0 for n in multigraph.nodes}
    stack = [start]
    walk: list[str] = []
    while stack:
        v = stack[-1]
        lst = incident[v]
        i = cursor[v]
        while i < len(lst) and used[lst[i][1]]:
            i += 1
        cursor[v] = i
        if i < len(lst):
            nxt, eid = lst[i]
            used[eid] = True
            stack.append(nxt)
        else:
            walk.append(stack.pop())
    walk.reverse()
    if len(walk) != len(multigraph.edges) + 1:
        raise NotEulerian("walk did not cover all edges")
    return TokenSequence(tuple(walk), closed=True)


def default_start(graph: CircuitGraph) -> str:
    return "VDD" if "VDD" in graph.nodes else min(graph.nodes)


def encode(circuit: Circuit, patterns=None) -> TokenSequence:
    """Full pipeline: pin graph -> optional substitution -> CPP walk."""
    graph = build_pin_graph(circuit)
    if patterns:
        from .mining import substitute_patterns

        graph = substitute_patterns(graph, patterns)
    multigraph, _ = eulerize(graph)
    seq = eulerian_circuit(multigraph, default_start(multigraph), 0)
    return TokenSequence(seq.tokens, closed=True, circuit_type=circuit.circuit_type)


def decode(sequence, patterns=None, vocab=None) -> CircuitGraph:
    """Rebuild the simple graph a token walk traverses.

    Duplicate walk edges collapse to a single graph edge; subcircuit
    tokens are expanded through the pattern library when one is given.
    """
    tokens = list(sequence.tokens if isinstance(sequence, TokenSequence) else sequence)
    closed = sequence.closed if isinstance(sequence, TokenSequence) else False
    if vocab is not None:
        for tok in tokens:
            if tok not in vocab.token_to_id:
                raise UnknownToken(tok)
    for a, b in itertools.pairwise(tokens):
        if a == b:
            raise SelfLoopToken(a)
    pairs = set()
    for a, b in itertools.pairwise(tokens):
        pairs.add((a, b) if a <= b else (b, a))
    if closed and len(tokens) >= 2 and tokens[0] != tokens[-1]:
        a, b = tokens[0], tokens[-1]
        pairs.add((a, b) if a <= b else (b, a))
    graph = CircuitGraph.from_edges(pairs, nodes=set(tokens), origin="decoded")
    if patterns:
        from .mining import expand_interface_tokens

        graph = expand_interface_tokens(graph, patterns)
    return graph


def augment(circuit: Circuit, k: int, patterns=None) -> list[TokenSequence]:
    """Up to k distinct walks from varied (start, tiebreak_seed) choices."""
    if k < 1:
        raise ValueError("k must be >= 1")
    graph = build_pin_graph(circuit)
    if patterns:
        from .mining import substitute_patterns

        graph = substitute_patterns(graph, patterns)
    multigraph, _ = eulerize(graph)
    starts = [default_start(multigraph)]
    starts += [n for n in multigraph.nodes if n != starts[0]]
    out: list[TokenSequence] = []
    seen = set()
    for i in range(k):
        seq = eulerian_circuit(multigraph, starts[i % len(starts)], i)
        if seq.tokens not in seen:
            seen.add(seq.tokens)
            out.append(TokenSequence(seq.tokens, True, circuit.circuit_type))
    return out


def legacy_encode(circuit: Circuit) -> TokenSequence:
    """Reference device-hub encoding with naive (unmatched) eulerization.

    Device nodes spoke out to their pins, device pins are pairwise
    connected, nets become cliques, and odd vertices are paired in sorted
    order rather than by minimum-cost matching.
    """
    pairs: set[tuple[str, str]] = set()
    nodes: set[str] = set()
    for dev in circuit.devices:
        toks = [pin_token(dev.id, role) for role, _ in dev.pins]
        nodes.add(dev.id)
        nodes.update(toks)
        for t in toks:
            pairs.add((dev.id, t) if dev.id <= t else (t, dev.id))
        for a, b in itertools.combinations(sorted(toks), 2):
            pairs.add((a, b))
    for net, members in circuit.nets.items():
        mem = sorted(pin_token(d, r) for d, r in members)
        if is_terminal_net(net):
            mem.append(net)
            nodes.add(net)
        for a, b in itertools.combinations(sorted(mem), 2):
            pairs.add((a, b))
    graph = CircuitGraph(tuple(sorted(nodes)), tuple(sorted(pairs)), origin=circuit.name)

    odd = sorted(odd_vertices(graph))
    adj = graph.adjacency()
    duplicated: list[tuple[str, str]] = []
    for a, b in zip(odd[0::2], odd[1::2]):
        _, parent = _bfs_tree(adj, a)
        node = b
        while node != a:
            prev = parent[node]
            duplicated.append((prev, node) if prev <= node else (node, prev))
            node = prev
    multigraph = CircuitGraph(
        graph.nodes, tuple(sorted(graph.edges + tuple(duplicated))), graph.origin
    )
    seq = eulerian_circuit(multigraph, default_start(multigraph), 0)
    return TokenSequence(seq.tokens, True, circuit.circuit_type)


def compression_rate(before: TokenSequence, after: TokenSequence) -> float:
    if len(before) == 0 or len(after) == 0:
        raise EmptySequence("compression_rate needs nonempty sequences")
    return len(before) / len(after)


def save_sequences(seqs: list[TokenSequence], path) -> None:
    """One circuit per line: type tag token, then the walk tokens."""
    with open(path, "w") as fh:
        for seq in seqs:
            tag = seq.circuit_type.tag if seq.circuit_type else CircuitType.OTHER.tag
            fh.write(" ".join((tag, *seq.tokens)) + "\n")


def load_sequences(path) -> list[TokenSequence]:
    out = []
    tag_map = {t.tag: t for t in CircuitType}
    with open(path) as fh:
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            ctype = tag_map.get(toks[0])
            body = toks[1:] if ctype is not None else toks
            closed = len(body) >= 2 and body[0] == body[-1]
            out.append(TokenSequence(tuple(body), closed, ctype))
    return out
