"""Evaluation suite for generated topologies and federation runs.

Validity is structural (decode, pin completeness, connectivity, supply and
IO presence, no dangling device); novelty is graph-level isomorphism with
a Weisfeiler-Lehman prefilter and exact backtracking confirmation; set
distance is an RBF-kernel MMD over fixed-length graph descriptors.
"""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import EmptyClient, EmptySet, FedcircError
from .euler import TokenSequence, decode
from .netlist import TERMINAL_PREFIXES
from .pingraph import PREFIX_ROLES, CircuitGraph, classify_token, node_label
from .vocab import Vocabulary, encode_ids

WL_ROUNDS = 3
SUPPLY_PREFIXES = ("VDD", "VSS", "GND")
KIND_CLASSES = ("NMOS", "PMOS", "BJT", "R", "C", "L", "D")

FAIL_DECODE = "DecodeError"
FAIL_PINS = "IncompletePins"
FAIL_DISCONNECTED = "Disconnected"
FAIL_NO_SUPPLY = "NoSupply"
FAIL_NO_IO = "NoIO"
FAIL_DANGLING = "DanglingDevice"


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    failures: tuple[str, ...]


def _terminal_role(token: str) -> str | None:
    """Terminal prefix a node supplies, seen through interface/expansion
    tokens as well as plain terminals."""
    label = node_label(token)
    if label in TERMINAL_PREFIXES:
        return label
    info = classify_token(token)
    if info is not None and info.category == "subcircuit":
        alpha = info.role.rstrip("0123456789")
        if alpha in TERMINAL_PREFIXES:
            return alpha
    return None


def _device_pins(graph: CircuitGraph) -> dict[str, dict[str, str]]:
    """device id -> {role: token} for every pin token in the graph."""
    devices: dict[str, dict[str, str]] = defaultdict(dict)
    for tok in graph.nodes:
        info = classify_token(tok)
        if info is not None and info.category == "pin":
            devices[info.device_id][info.role] = tok
    return devices


def validity_check(sequence, vocab: Vocabulary | None = None, patterns=None) -> ValidityReport:
    """Run all structural checks; failures are data, not exceptions."""
    failures: list[str] = []
    try:
        graph = decode(sequence, patterns=patterns, vocab=vocab)
    except FedcircError:
        return ValidityReport(False, (FAIL_DECODE,))

    devices = _device_pins(graph)
    for dev_id, roles in sorted(devices.items()):
        info = classify_token(dev_id + next(iter(roles)))
        required = set(PREFIX_ROLES[info.prefix])
        if set(roles) != required:
            failures.append(FAIL_PINS)
            break

    if not graph.nodes or not graph.is_connected():
        failures.append(FAIL_DISCONNECTED)

    prefixes = {p for p in map(_terminal_role, graph.nodes) if p is not None}
    if not prefixes & set(SUPPLY_PREFIXES):
        failures.append(FAIL_NO_SUPPLY)
    if "VIN" not in prefixes or "VOUT" not in prefixes:
        failures.append(FAIL_NO_IO)

    adj = graph.adjacency()
    for dev_id, roles in sorted(devices.items()):
        pins = set(roles.values())
        if not any(nbr not in pins for tok in pins for nbr in adj[tok]):
            failures.append(FAIL_DANGLING)
            break

    return ValidityReport(not failures, tuple(failures))


# ---------------------------------------------------------------------------
# isomorphism


def _digest(text: str) -> str:
    return hashlib.sha1(text.encode()).hexdigest()[:16]


def wl_hash(graph: CircuitGraph, rounds: int = WL_ROUNDS) -> str:
    """Canonical iterated neighborhood-refinement hash (label space)."""
    adj = {n: sorted(set(nbrs)) for n, nbrs in graph.adjacency().items()}
    labels = {n: node_label(n) for n in graph.nodes}
    for _ in range(rounds):
        labels = {
            n: _digest(labels[n] + "|" + ",".join(sorted(labels[m] for m in adj[n])))
            for n in graph.nodes
        }
    body = ",".join(sorted(labels.values()))
    return _digest(f"{len(graph.simple_edges)}|{body}")


def _refine_colors(g1: CircuitGraph, g2: CircuitGraph, rounds: int = WL_ROUNDS):
    adj1 = {n: sorted(set(ns)) for n, ns in g1.adjacency().items()}
    adj2 = {n: sorted(set(ns)) for n, ns in g2.adjacency().items()}
    c1 = {n: node_label(n) for n in g1.nodes}
    c2 = {n: node_label(n) for n in g2.nodes}
    for _ in range(rounds):
        sig1 = {n: (c1[n], tuple(sorted(c1[m] for m in adj1[n]))) for n in g1.nodes}
        sig2 = {n: (c2[n], tuple(sorted(c2[m] for m in adj2[n]))) for n in g2.nodes}
        palette = {s: i for i, s in enumerate(sorted(set(sig1.values()) | set(sig2.values())))}
        c1 = {n: palette[sig1[n]] for n in g1.nodes}
        c2 = {n: palette[sig2[n]] for n in g2.nodes}
    return c1, c2


def is_isomorphic(g1: CircuitGraph, g2: CircuitGraph) -> bool:
    """Exact label-preserving isomorphism over the simple edge sets."""
    e1, e2 = g1.simple_edges, g2.simple_edges
    if len(g1.nodes) != len(g2.nodes) or len(e1) != len(e2):
        return False
    c1, c2 = _refine_colors(g1, g2)
    if Counter(c1.values()) != Counter(c2.values()):
        return False
    by_color: dict[int, list[str]] = defaultdict(list)
    for n, c in c2.items():
        by_color[c].append(n)
    adj1 = {n: set(ns) for n, ns in g1.adjacency().items()}
    adj2 = {n: set(ns) for n, ns in g2.adjacency().items()}
    class_size = Counter(c1.values())
    order = sorted(g1.nodes, key=lambda n: (class_size[c1[n]], c1[n], n))

    mapping: dict[str, str] = {}
    used: set[str] = set()

    def backtrack(pos: int) -> bool:
        if pos == len(order):
            return True
        u = order[pos]
        mapped_nbrs = [v for v in adj1[u] if v in mapping]
        for cand in by_color[c1[u]]:
            if cand in used or len(adj2[cand]) != len(adj1[u]):
                continue
            if any(mapping[v] not in adj2[cand] for v in mapped_nbrs):
                continue
            mapping[u] = cand
            used.add(cand)
            if backtrack(pos + 1):
                return True
            del mapping[u]
            used.discard(cand)
        return False

    return backtrack(0)


@dataclass(frozen=True)
class NoveltyReport:
    diff_fraction: float
    unique_fraction: float
    n_generated: int
    n_decoded: int


def novelty(
    generated: list[TokenSequence],
    training: list[TokenSequence],
    patterns=None,
) -> NoveltyReport:
    """diff = share of decoded generated graphs isomorphic to no training
    graph; unique = share of pairwise non-isomorphic generated graphs."""
    gen_graphs = []
    for seq in generated:
        try:
            gen_graphs.append(decode(seq, patterns=patterns))
        except FedcircError:
            continue
    train_graphs = [decode(seq, patterns=patterns) for seq in training]
    if not gen_graphs:
        return NoveltyReport(0.0, 0.0, len(generated), 0)

    train_by_hash: dict[str, list[CircuitGraph]] = defaultdict(list)
    for g in train_graphs:
        train_by_hash[wl_hash(g)].append(g)

    novel = 0
    classes: list[tuple[str, CircuitGraph]] = []
    for g in gen_graphs:
        h = wl_hash(g)
        if not any(is_isomorphic(g, t) for t in train_by_hash.get(h, ())):
            novel += 1
        if not any(hc == h and is_isomorphic(g, gc) for hc, gc in classes):
            classes.append((h, g))
    n = len(gen_graphs)
    return NoveltyReport(novel / n, len(classes) / n, len(generated), n)


# ---------------------------------------------------------------------------
# MMD over graph descriptors


def graph_descriptor(graph: CircuitGraph) -> np.ndarray:
    """Fixed-length vector: counts, device-kind mix, degrees, terminals."""
    devices = _device_pins(graph)
    kind_hist = np.zeros(len(KIND_CLASSES))
    from .netlist import PREFIX_KIND_LABEL

    for dev_id in devices:
        info = classify_token(dev_id + next(iter(devices[dev_id])))
        kind_hist[KIND_CLASSES.index(PREFIX_KIND_LABEL[info.prefix])] += 1
    if devices:
        kind_hist /= len(devices)

    degrees = list(graph.degrees().values())
    deg_hist = np.zeros(6)
    for d in degrees:
        deg_hist[min(max(d, 1), 6) - 1] += 1
    if degrees:
        deg_hist /= len(degrees)

    term_counts = np.zeros(len(TERMINAL_PREFIXES))
    for tok in graph.nodes:
        info = classify_token(tok)
        if info is not None and info.category == "terminal":
            term_counts[TERMINAL_PREFIXES.index(info.prefix)] += 1

    return np.concatenate(
        [[len(graph.nodes), len(graph.simple_edges)], kind_hist, deg_hist, term_counts]
    )


def _rbf(x: np.ndarray, y: np.ndarray, bw: float) -> np.ndarray:
    d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / bw**2)


def mmd(set_a: list[CircuitGraph], set_b: list[CircuitGraph]) -> float:
    """RBF-kernel MMD between graph sets over fixed-length descriptors."""
    if not set_a or not set_b:
        raise EmptySet("mmd needs two nonempty graph sets")
    xa = np.stack([graph_descriptor(g) for g in set_a])
    xb = np.stack([graph_descriptor(g) for g in set_b])
    return mmd_from_descriptors(xa, xb)


def mmd_from_descriptors(xa: np.ndarray, xb: np.ndarray) -> float:
    """Unbiased MMD^2 (biased for singleton sets) with median-distance
    bandwidth, clamped at zero and square-rooted."""
    pooled = np.concatenate([xa, xb])
    d2 = ((pooled[:, None, :] - pooled[None, :, :]) ** 2).sum(-1)
    upper = d2[np.triu_indices(len(pooled), k=1)]
    bw = float(np.sqrt(np.median(upper))) if len(upper) else 0.0
    if bw == 0.0:
        bw = 1.0

    kaa = _rbf(xa, xa, bw)
    kbb = _rbf(xb, xb, bw)
    kab = _rbf(xa, xb, bw)
    m, n = len(xa), len(xb)
    if m > 1:
        term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    else:
        term_a = kaa.sum() / (m * m)
    if n > 1:
        term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    else:
        term_b = kbb.sum() / (n * n)
    mmd2 = term_a + term_b - 2.0 * kab.mean()
    return float(np.sqrt(max(mmd2, 0.0)))


# ---------------------------------------------------------------------------
# scalar metrics


def scalability(sequences: list[TokenSequence], patterns=None) -> int:
    """Largest distinct-device count over the decodable sequences."""
    best = 0
    for seq in sequences:
        try:
            graph = decode(seq, patterns=patterns)
        except FedcircError:
            continue
        best = max(best, len(_device_pins(graph)))
    return best


def versatility(sequences: list[TokenSequence], vocab=None, patterns=None) -> int:
    """Distinct circuit-type tags among the valid sequences."""
    types = set()
    for seq in sequences:
        if seq.circuit_type is None:
            continue
        if validity_check(seq, vocab=vocab, patterns=patterns).valid:
            types.add(seq.circuit_type)
    return len(types)


def rank_reward(valid: bool, relevant: bool, high_perf: bool) -> float:
    if not valid:
        return -1.0
    if not relevant:
        return -0.5
    return 1.0 if high_perf else 0.5


# ---------------------------------------------------------------------------
# heterogeneity


@dataclass(frozen=True)
class HeterogeneityStats:
    client_id: int
    mean: float
    mse: float
    bin_edges: np.ndarray
    densities: np.ndarray


def heterogeneity_stats(
    client_datasets: list[list[TokenSequence]],
    params,
    vocab: Vocabulary,
    bins: int = 50,
    baseline: str = "global",
) -> list[HeterogeneityStats]:
    """Embedding-value statistics per client over shared histogram bins.

    mean is the grand mean of a client's embedding entries; mse is the
    mean squared deviation from the all-client grand mean (or the client's
    own mean with baseline="client").
    """
    from .lm import embed_tokens

    entries = []
    for i, dataset in enumerate(client_datasets):
        ids = [tid for seq in dataset for tid in encode_ids(vocab, seq.tokens)]
        if not ids:
            raise EmptyClient(f"client {i} has no tokens")
        entries.append(embed_tokens(params, ids).astype(np.float64).ravel())

    pooled = np.concatenate(entries)
    global_mean = float(pooled.mean())
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)

    out = []
    for i, vals in enumerate(entries):
        mean_i = float(vals.mean())
        ref = global_mean if baseline == "global" else mean_i
        mse_i = float(((vals - ref) ** 2).mean())
        dens, _ = np.histogram(vals, bins=edges, density=True)
        out.append(HeterogeneityStats(i, mean_i, mse_i, edges, dens))
    return out


def heterogeneity_csv(stats: list[HeterogeneityStats]) -> str:
    lines = ["client,mean,mse"]
    lines += [f"{s.client_id},{s.mean:.6e},{s.mse:.6e}" for s in stats]
    return "\n".join(lines) + "\n"


def evaluate_generation(
    generated: list[TokenSequence],
    training: list[TokenSequence],
    vocab: Vocabulary | None = None,
    patterns=None,
) -> dict:
    """Aggregate report used by the eval subcommand."""
    reports = [validity_check(s, vocab=vocab, patterns=patterns) for s in generated]
    n_valid = sum(r.valid for r in reports)
    failure_counts = Counter(f for r in reports for f in r.failures)
    nov = novelty(generated, training, patterns=patterns)

    gen_graphs = []
    for seq, rep in zip(generated, reports):
        if rep.valid:
            gen_graphs.append(decode(seq, patterns=patterns))
    train_graphs = [decode(seq, patterns=patterns) for seq in training]
    set_distance = mmd(gen_graphs, train_graphs) if gen_graphs and train_graphs else None

    return {
        "n_generated": len(generated),
        "validity_rate": n_valid / len(generated) if generated else 0.0,
        "failures": dict(sorted(failure_counts.items())),
        "diff_fraction": nov.diff_fraction,
        "unique_fraction": nov.unique_fraction,
        "mmd": set_distance,
        "scalability": scalability(generated, patterns=patterns),
        "versatility": versatility(generated, vocab=vocab, patterns=patterns),
    }
