"""Frequent subgraph mining and subcircuit tokenization.

Patterns are mined with gSpan over structural node labels (device kind +
pin role, terminal prefix), so a pattern generalizes across device
instances.  Nodes that never touch anything outside the pattern are pruned
and the remaining boundary nodes collapse to a cycle of subcircuit
interface tokens such as ``SG1VDD`` or ``SG1termA``.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass

from .errors import AllNodesIsolated, EmptyCorpus, NoOccurrences
from .netlist import TERMINAL_PREFIXES
from .pingraph import PREFIX_ROLES, CircuitGraph, classify_token, node_label

log = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 0.25
DEFAULT_MAX_EDGES = 8
DEFAULT_ISOLATION_THRESHOLD = 0.5

# code edge: (frm, to, label_frm, label_to); forward iff frm < to
Code = tuple[tuple[int, int, str, str], ...]


@dataclass(frozen=True)
class PatternGraph:
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]  # u < v

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {i: [] for i in range(self.n_nodes)}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class SubgraphPattern:
    pattern_id: str
    canonical_code: Code
    support: float
    node_labels: tuple[str, ...]

    @property
    def graph(self) -> PatternGraph:
        return _code_to_pattern(self.canonical_code)

    @property
    def n_edges(self) -> int:
        return len(self.canonical_code)


@dataclass(frozen=True)
class SimplifiedPattern:
    pattern_id: str
    boundary_indices: tuple[int, ...]  # pattern node ids, canonical order
    interface_tokens: tuple[str, ...]  # parallel to boundary_indices
    expansion: SubgraphPattern

    @property
    def boundary_nodes(self) -> tuple[str, ...]:
        labels = self.expansion.node_labels
        return tuple(labels[i] for i in self.boundary_indices)

    @property
    def isolated_indices(self) -> tuple[int, ...]:
        keep = set(self.boundary_indices)
        return tuple(i for i in range(len(self.expansion.node_labels)) if i not in keep)

    def cycle_edges(self) -> list[tuple[str, str]]:
        """Edges of the simplified structure, over interface tokens."""
        toks = self.interface_tokens
        if len(toks) < 2:
            return []
        if len(toks) == 2:
            return [tuple(sorted(toks))]
        return [tuple(sorted((toks[i], toks[(i + 1) % len(toks)]))) for i in range(len(toks))]


@dataclass(frozen=True)
class SubstitutionRecord:
    pattern_id: str
    node_images: tuple[tuple[int, str], ...]  # pattern node -> original token
    interface: tuple[tuple[int, str], ...]  # boundary node -> SG token
    external: tuple[tuple[str, str, str], ...]  # (sg token, original token, outside nbr)


# ---------------------------------------------------------------------------
# gSpan


class _HostGraph:
    """Host-side adjacency with edge ids for projection bookkeeping."""

    def __init__(self, labels: list[str], edges: list[tuple[int, int]]):
        self.labels = labels
        self.edges = edges
        self.adj: list[list[tuple[int, int]]] = [[] for _ in labels]
        for eid, (u, v) in enumerate(edges):
            self.adj[u].append((v, eid))
            self.adj[v].append((u, eid))
        for lst in self.adj:
            lst.sort(key=lambda t: (self.labels[t[0]], t[0], t[1]))


class _PDFS:
    __slots__ = ("gid", "frm", "to", "eid", "prev")

    def __init__(self, gid, frm, to, eid, prev):
        self.gid = gid
        self.frm = frm
        self.to = to
        self.eid = eid
        self.prev = prev


def _rightmost_path(code: Code) -> list[int]:
    """Indices of code edges on the rightmost path, deepest first."""
    rmp: list[int] = []
    old_frm = None
    for idx in range(len(code) - 1, -1, -1):
        frm, to = code[idx][0], code[idx][1]
        if frm < to and (old_frm is None or to == old_frm):
            rmp.append(idx)
            old_frm = frm
    return rmp


def _code_to_pattern(code: Code) -> PatternGraph:
    labels: dict[int, str] = {}
    edges = []
    for frm, to, lf, lt in code:
        labels[frm] = lf
        labels[to] = lt
        edges.append((frm, to) if frm < to else (to, frm))
    n = max(labels) + 1
    return PatternGraph(tuple(labels[i] for i in range(n)), tuple(sorted(edges)))


def _projection_images(code: Code, p: _PDFS) -> tuple[list[int], set[int]]:
    """(code-vertex -> host-vertex images, used host edge ids) for one chain."""
    chain = []
    while p is not None:
        chain.append(p)
        p = p.prev
    chain.reverse()
    images: dict[int, int] = {}
    used: set[int] = set()
    for step, pd in zip(code, chain):
        frm, to = step[0], step[1]
        images[frm] = pd.frm
        images[to] = pd.to
        used.add(pd.eid)
    n = max(images) + 1
    return [images[i] for i in range(n)], used


def _extensions(code: Code, projections: list[_PDFS], graphs: dict[int, _HostGraph]):
    """Grouped rightmost-path extensions of `code` over all projections."""
    rmpath = _rightmost_path(code)
    max_to = code[rmpath[0]][1]
    min_label = code[0][2]
    backward = defaultdict(list)  # (frm, to) -> projections
    forward = defaultdict(list)  # (frm, to, lf, lt) -> projections

    for p in projections:
        g = graphs[p.gid]
        images, used = _projection_images(code, p)
        rm_image = images[max_to]

        # backward: rightmost vertex to an earlier rightmost-path vertex
        for idx in rmpath[::-1][:-1]:
            target = code[idx][0]
            tgt_image = images[target]
            for (nbr, eid) in g.adj[rm_image]:
                if eid in used or nbr != tgt_image:
                    continue
                # only extensions no smaller than the shadowed forward edge
                if g.labels[images[code[idx][1]]] <= g.labels[rm_image]:
                    key = (max_to, target, g.labels[rm_image], g.labels[tgt_image])
                    backward[key].append(_PDFS(p.gid, rm_image, tgt_image, eid, p))

        onpath = set(images)
        # forward from the rightmost vertex
        for (nbr, eid) in g.adj[rm_image]:
            if eid in used or nbr in onpath or g.labels[nbr] < min_label:
                continue
            key = (max_to, max_to + 1, g.labels[rm_image], g.labels[nbr])
            forward[key].append(_PDFS(p.gid, rm_image, nbr, eid, p))
        # forward from shallower rightmost-path vertices
        for idx in rmpath:
            frm_code = code[idx][0]
            frm_image = images[frm_code]
            to_label = g.labels[images[code[idx][1]]]
            for (nbr, eid) in g.adj[frm_image]:
                if eid in used or nbr in onpath or g.labels[nbr] < min_label:
                    continue
                if to_label <= g.labels[nbr]:
                    key = (frm_code, max_to + 1, g.labels[frm_image], g.labels[nbr])
                    forward[key].append(_PDFS(p.gid, frm_image, nbr, eid, p))
    return backward, forward


def _min_code(pattern: PatternGraph) -> Code:
    """Minimum DFS code of a pattern graph (canonical form)."""
    host = _HostGraph(list(pattern.labels), [tuple(e) for e in pattern.edges])
    graphs = {0: host}
    first = None
    for u, v in pattern.edges:
        for a, b in ((u, v), (v, u)):
            key = (host.labels[a], host.labels[b])
            if first is None or key < first:
                first = key
    code: list = [(0, 1, first[0], first[1])]
    projections = [
        _PDFS(0, a, b, eid, None)
        for eid, (u, v) in enumerate(pattern.edges)
        for a, b in ((u, v), (v, u))
        if (host.labels[a], host.labels[b]) == first
    ]
    while len(code) < len(pattern.edges):
        backward, forward = _extensions(tuple(code), projections, graphs)
        if backward:
            # smallest backward target wins; labels are position-determined
            key = min(backward, key=lambda k: k[1])
            code.append(key)
            projections = backward[key]
            continue
        key = min(forward, key=lambda k: (-k[0], k[2], k[3]))
        code.append(key)
        projections = forward[key]
    return tuple(code)


def min_dfs_code(labels, edges) -> Code:
    """Canonical minimum DFS code of an arbitrary labeled graph."""
    norm = tuple(sorted((u, v) if u < v else (v, u) for u, v in edges))
    return _min_code(PatternGraph(tuple(labels), norm))


def _mining_views(corpus: list[CircuitGraph]):
    """Host graphs in label space plus node-token lookup per graph."""
    hosts = {}
    token_maps = []
    for gid, graph in enumerate(corpus):
        tokens = list(graph.nodes)
        index = {t: i for i, t in enumerate(tokens)}
        labels = [node_label(t) for t in tokens]
        edges = sorted({(index[u], index[v]) if index[u] < index[v] else (index[v], index[u]) for u, v in graph.simple_edges})
        hosts[gid] = _HostGraph(labels, edges)
        token_maps.append(tokens)
    return hosts, token_maps


def mine_frequent_subgraphs(
    corpus: list[CircuitGraph],
    min_support: float = DEFAULT_MIN_SUPPORT,
    max_edges: int = DEFAULT_MAX_EDGES,
) -> list[SubgraphPattern]:
    """All connected patterns with <= max_edges edges and graph-level
    support >= min_support, in canonical form, sorted by
    (support desc, edge count desc, code asc)."""
    if not corpus:
        raise EmptyCorpus("mining corpus is empty")
    if not (0 < min_support <= 1):
        raise ValueError(f"min_support must be in (0, 1], got {min_support}")
    if max_edges < 1:
        raise ValueError("max_edges must be >= 1")
    hosts, _ = _mining_views(corpus)
    n_graphs = len(corpus)
    results: list[tuple[Code, int]] = []

    def support_of(projections) -> int:
        return len({p.gid for p in projections})

    def frequent(count: int) -> bool:
        return count / n_graphs >= min_support - 1e-12

    def grow(code: list, projections: list[_PDFS]):
        count = support_of(projections)
        if not frequent(count):
            return
        if tuple(code) != _min_code(_code_to_pattern(tuple(code))):
            return
        results.append((tuple(code), count))
        if len(code) >= max_edges:
            return
        backward, forward = _extensions(tuple(code), projections, hosts)
        for key in sorted(backward, key=lambda k: k[1]):
            code.append(key)
            grow(code, backward[key])
            code.pop()
        for key in sorted(forward, key=lambda k: (-k[0], k[2], k[3])):
            code.append(key)
            grow(code, forward[key])
            code.pop()

    roots = defaultdict(list)
    for gid, host in hosts.items():
        for eid, (u, v) in enumerate(host.edges):
            for a, b in ((u, v), (v, u)):
                la, lb = host.labels[a], host.labels[b]
                if la <= lb:
                    roots[(0, 1, la, lb)].append(_PDFS(gid, a, b, eid, None))
    for key in sorted(roots):
        grow([key], roots[key])

    patterns = []
    for code, count in results:
        pat = _code_to_pattern(code)
        patterns.append((code, count / n_graphs, pat.labels))
    patterns.sort(key=lambda t: (-t[1], -len(t[0]), t[0]))
    return [
        SubgraphPattern(f"SG{i + 1}", code, support, labels)
        for i, (code, support, labels) in enumerate(patterns)
    ]


# ---------------------------------------------------------------------------
# occurrences, classification, simplification


@dataclass(frozen=True)
class Occurrence:
    host: CircuitGraph
    mapping: tuple[tuple[int, str], ...]  # pattern node -> host token

    def image(self) -> dict[int, str]:
        return dict(self.mapping)


def find_embeddings(pattern: PatternGraph, graph: CircuitGraph) -> list[dict[int, str]]:
    """All label-preserving injective embeddings of pattern into graph.

    Pattern edges must exist in the host; extra host edges between image
    nodes are allowed (edge-subgraph, not induced).
    """
    tokens = sorted(graph.nodes)
    labels = {t: node_label(t) for t in tokens}
    adj: dict[str, set[str]] = {t: set() for t in tokens}
    for u, v in graph.simple_edges:
        adj[u].add(v)
        adj[v].add(u)
    pat_adj = pattern.adjacency()
    order = list(range(pattern.n_nodes))
    out: list[dict[int, str]] = []

    def backtrack(pos: int, assign: dict[int, str], used: set[str]):
        if pos == len(order):
            out.append(dict(assign))
            return
        node = order[pos]
        earlier = [q for q in pat_adj[node] if q in assign]
        if earlier:
            cands = set.intersection(*(adj[assign[q]] for q in earlier))
        else:
            cands = tokens
        for tok in sorted(cands):
            if tok in used or labels[tok] != pattern.labels[node]:
                continue
            assign[node] = tok
            used.add(tok)
            backtrack(pos + 1, assign, used)
            del assign[node]
            used.discard(tok)

    backtrack(0, {}, set())
    return out


def collect_occurrences(pattern: SubgraphPattern, corpus: list[CircuitGraph]) -> list[Occurrence]:
    occs = []
    for graph in corpus:
        for mapping in find_embeddings(pattern.graph, graph):
            occs.append(Occurrence(graph, tuple(sorted(mapping.items()))))
    return occs


def classify_pattern_nodes(
    pattern: SubgraphPattern, host_occurrences: list[Occurrence]
) -> tuple[set[int], set[int]]:
    """Partition pattern nodes into (isolated, non_isolated).

    A node is isolated iff in every occurrence its image has no edge
    leaving the occurrence's image set.
    """
    if not host_occurrences:
        raise NoOccurrences(pattern.pattern_id)
    n = pattern.graph.n_nodes
    isolated = set(range(n))
    for occ in host_occurrences:
        image = occ.image()
        image_set = set(image.values())
        adj = occ.host.adjacency()
        for node in list(isolated):
            tok = image[node]
            if any(nbr not in image_set for nbr in adj[tok]):
                isolated.discard(node)
    return isolated, set(range(n)) - isolated


def _interface_roles(labels: list[str]) -> list[str]:
    roles = []
    seen: dict[str, int] = {}
    term_idx = 0
    for lbl in labels:
        if lbl in TERMINAL_PREFIXES:
            base = lbl
        else:
            base = "term" + chr(ord("A") + term_idx)
            term_idx += 1
        seen[base] = seen.get(base, 0) + 1
        roles.append(base if seen[base] == 1 else f"{base}{seen[base]}")
    return roles


def simplify_pattern(pattern: SubgraphPattern, isolated: set[int]) -> SimplifiedPattern:
    """Drop isolated nodes; boundary nodes form the substituted cycle."""
    n = pattern.graph.n_nodes
    boundary = tuple(i for i in range(n) if i not in isolated)
    if not boundary:
        raise AllNodesIsolated(pattern.pattern_id)
    labels = [pattern.node_labels[i] for i in boundary]
    tokens = tuple(pattern.pattern_id + role for role in _interface_roles(labels))
    return SimplifiedPattern(pattern.pattern_id, boundary, tokens, pattern)


def build_pattern_library(
    corpus: list[CircuitGraph],
    min_support: float = DEFAULT_MIN_SUPPORT,
    max_edges: int = DEFAULT_MAX_EDGES,
    isolation_threshold: float = DEFAULT_ISOLATION_THRESHOLD,
) -> list[SimplifiedPattern]:
    """Mine, classify and simplify the substitution-eligible patterns."""
    library = []
    for pattern in mine_frequent_subgraphs(corpus, min_support, max_edges):
        occs = collect_occurrences(pattern, corpus)
        isolated, _ = classify_pattern_nodes(pattern, occs)
        if len(isolated) / pattern.graph.n_nodes < isolation_threshold:
            continue
        try:
            library.append(simplify_pattern(pattern, isolated))
        except AllNodesIsolated:
            log.info("pattern %s rejected: every node isolated", pattern.pattern_id)
    return library


# ---------------------------------------------------------------------------
# substitution


def _substitution_order(patterns: list[SimplifiedPattern]) -> list[SimplifiedPattern]:
    return sorted(patterns, key=lambda p: (-p.expansion.n_edges, p.expansion.canonical_code))


def _covers_whole_devices(image: set[str], nodes: set[str]) -> bool:
    """No device may have some pins inside the image and some outside."""
    touched = set()
    for tok in image:
        info = classify_token(tok)
        if info is not None and info.category == "pin":
            touched.add((info.device_id, info.prefix))
    for dev_id, prefix in touched:
        for role in PREFIX_ROLES[prefix]:
            tok = dev_id + role
            if tok in nodes and tok not in image:
                return False
    return True


def substitute_patterns(graph: CircuitGraph, patterns: list[SimplifiedPattern]) -> CircuitGraph:
    """Replace pattern occurrences with subcircuit interface tokens.

    Greedy largest-first over non-overlapping occurrences.  Because
    interface tokens are pattern-level names, at most one occurrence of
    each pattern is substituted per graph; an occurrence is only eligible
    when it is induced, consumes whole devices (never a strict subset of a
    device's pins), and its isolated nodes have no outside edges, which
    keeps the substitution reversible and the result decodable.
    """
    nodes = set(graph.nodes)
    edges = set(graph.simple_edges)
    records = list(graph.substitutions)
    consumed: set[str] = set()

    for pat in _substitution_order(patterns):
        expansion = pat.expansion.graph
        current = CircuitGraph.from_edges(edges, nodes=nodes, origin=graph.origin)
        adj = current.adjacency()
        chosen = None
        for mapping in sorted(
            find_embeddings(expansion, current),
            key=lambda m: tuple(sorted(m.values())),
        ):
            image = set(mapping.values())
            if image & consumed or any(t in nodes for t in pat.interface_tokens):
                continue
            internal = {e for e in edges if e[0] in image and e[1] in image}
            if len(internal) != len(expansion.edges):
                continue  # not induced
            if not _covers_whole_devices(image, nodes):
                continue
            iso_ok = all(
                all(nbr in image for nbr in adj[mapping[i]])
                for i in pat.isolated_indices
            )
            if not iso_ok:
                continue
            chosen = mapping
            break
        if chosen is None:
            continue

        image = set(chosen.values())
        sg_of = dict(zip(pat.boundary_indices, pat.interface_tokens))
        external = []
        new_edges = set()
        for u, v in edges:
            u_in, v_in = u in image, v in image
            if not u_in and not v_in:
                new_edges.add((u, v))
        for b_idx, sg_tok in sg_of.items():
            orig = chosen[b_idx]
            for nbr in adj[orig]:
                if nbr not in image:
                    pair = (sg_tok, nbr) if sg_tok <= nbr else (nbr, sg_tok)
                    new_edges.add(pair)
                    external.append((sg_tok, orig, nbr))
        new_edges.update(pat.cycle_edges())
        nodes = (nodes - image) | set(pat.interface_tokens)
        edges = new_edges
        consumed |= image | set(pat.interface_tokens)
        records.append(
            SubstitutionRecord(
                pat.pattern_id,
                tuple(sorted(chosen.items())),
                tuple(sorted(sg_of.items())),
                tuple(sorted(external)),
            )
        )

    if len(records) == len(graph.substitutions):
        return graph
    return CircuitGraph.from_edges(edges, nodes=nodes, origin=graph.origin, substitutions=records)


def expand_substitutions(graph: CircuitGraph, patterns: list[SimplifiedPattern]) -> CircuitGraph:
    """Exact inverse of substitute_patterns via the recorded maps."""
    lib = {p.pattern_id: p for p in patterns}
    nodes = set(graph.nodes)
    edges = set(graph.simple_edges)
    for rec in reversed(graph.substitutions):
        pat = lib[rec.pattern_id]
        sg_tokens = {sg for _, sg in rec.interface}
        edges = {e for e in edges if e[0] not in sg_tokens and e[1] not in sg_tokens}
        nodes -= sg_tokens
        images = dict(rec.node_images)
        nodes.update(images.values())
        for u, v in pat.expansion.graph.edges:
            a, b = images[u], images[v]
            edges.add((a, b) if a <= b else (b, a))
        for _, orig, nbr in rec.external:
            edges.add((orig, nbr) if orig <= nbr else (nbr, orig))
    return CircuitGraph.from_edges(edges, nodes=nodes, origin=graph.origin)


def expanded_token(pattern_id: str, node: int, label: str) -> str:
    return f"{pattern_id}::{node}::{label}"


def expand_interface_tokens(graph: CircuitGraph, patterns: list[SimplifiedPattern]) -> CircuitGraph:
    """Expand SG tokens in a decoded graph using the library expansions.

    Materialized internal nodes carry their structural label inside the
    token so downstream isomorphism checks still see pattern structure.
    """
    lib = {p.pattern_id: p for p in patterns}
    groups: dict[str, list[str]] = defaultdict(list)
    for tok in graph.nodes:
        info = classify_token(tok)
        if info is not None and info.category == "subcircuit" and info.pattern_id in lib:
            groups[info.pattern_id].append(tok)

    nodes = set(graph.nodes)
    edges = set(graph.simple_edges)
    for pid, sg_tokens in sorted(groups.items()):
        pat = lib[pid]
        expansion = pat.expansion.graph
        mat = {
            i: expanded_token(pid, i, expansion.labels[i]) for i in range(expansion.n_nodes)
        }
        tok_to_boundary = dict(zip(pat.interface_tokens, pat.boundary_indices))
        sg_set = set(sg_tokens)
        rewired = set()
        for u, v in edges:
            u_in, v_in = u in sg_set, v in sg_set
            if not u_in and not v_in:
                rewired.add((u, v))
                continue
            if u_in and v_in:
                continue  # simplified-cycle edge, superseded by the expansion
            sg, other = (u, v) if u_in else (v, u)
            target = mat[tok_to_boundary[sg]]
            rewired.add((target, other) if target <= other else (other, target))
        for u, v in expansion.edges:
            a, b = mat[u], mat[v]
            rewired.add((a, b) if a <= b else (b, a))
        nodes = (nodes - sg_set) | set(mat.values())
        edges = rewired
    return CircuitGraph.from_edges(edges, nodes=nodes, origin=graph.origin)


# ---------------------------------------------------------------------------
# pattern library file format


def save_pattern_library(patterns: list[SimplifiedPattern], path) -> None:
    """Line-oriented library: node/edge/boundary records per pattern."""
    with open(path, "w") as fh:
        for pat in patterns:
            exp = pat.expansion
            fh.write(f"pattern {pat.pattern_id} support={exp.support:.6f}\n")
            for i, lbl in enumerate(exp.node_labels):
                fh.write(f"node {i} {lbl}\n")
            for u, v in exp.graph.edges:
                fh.write(f"edge {u} {v}\n")
            for idx, tok in zip(pat.boundary_indices, pat.interface_tokens):
                fh.write(f"boundary {idx} {tok}\n")
            fh.write("end\n")


def load_pattern_library(path) -> list[SimplifiedPattern]:
    patterns = []
    pid = None
    support = 0.0
    labels: dict[int, str] = {}
    edges: list[tuple[int, int]] = []
    boundary: list[tuple[int, str]] = []
    with open(path) as fh:
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            if toks[0] == "pattern":
                pid = toks[1]
                support = float(toks[2].split("=", 1)[1])
                labels, edges, boundary = {}, [], []
            elif toks[0] == "node":
                labels[int(toks[1])] = toks[2]
            elif toks[0] == "edge":
                edges.append((int(toks[1]), int(toks[2])))
            elif toks[0] == "boundary":
                boundary.append((int(toks[1]), toks[2]))
            elif toks[0] == "end":
                ordered = tuple(labels[i] for i in range(len(labels)))
                code = min_dfs_code(ordered, edges)
                expansion = SubgraphPattern(pid, code, support, ordered)
                patterns.append(
                    SimplifiedPattern(
                        pid,
                        tuple(i for i, _ in boundary),
                        tuple(t for _, t in boundary),
                        expansion,
                    )
                )
    return patterns
