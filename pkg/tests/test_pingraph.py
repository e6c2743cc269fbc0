import itertools

import pytest

from fedcirc import netlist, pingraph
from fedcirc.errors import InvalidCircuit
from fedcirc.netlist import Circuit, CircuitType, Device, DeviceKind, is_terminal_net
from fedcirc.pingraph import build_pin_graph, classify_token, edge_savings, node_label


def circuit_of(devices, name="t", ctype=CircuitType.OTHER):
    return Circuit(name, ctype, tuple(devices))


def mos(dev_id, d, g, s, b, kind=DeviceKind.NMOS):
    return Device(dev_id, kind, (("D", d), ("G", g), ("S", s), ("B", b)))


def two_pin(dev_id, a, b, kind=DeviceKind.R):
    return Device(dev_id, kind, (("A", a), ("B", b)))


def independent_edge_set(circuit):
    """Oracle: distinct cycle pairs union star pairs, from first principles."""
    pairs = set()
    for dev in circuit.devices:
        toks = [dev.id + r for r, _ in dev.pins]
        if len(toks) == 2:
            pairs.add(tuple(sorted(toks)))
        else:
            for i in range(len(toks)):
                pairs.add(tuple(sorted((toks[i], toks[(i + 1) % len(toks)]))))
    for net, members in circuit.nets.items():
        pins = sorted(d + r for d, r in members)
        anchor, rest = (net, pins) if is_terminal_net(net) else (pins[0], pins[1:])
        pairs.update(tuple(sorted((anchor, m))) for m in rest)
    return pairs


def test_isolated_mos_is_plain_cycle():
    g = build_pin_graph(circuit_of([mos("NM1", "a", "b", "c", "d")]))
    assert len(g.nodes) == 4
    assert len(g.edges) == 4
    assert set(g.edges) == {
        ("NM1D", "NM1G"),
        ("NM1G", "NM1S"),
        ("NM1B", "NM1S"),
        ("NM1B", "NM1D"),
    }


def test_two_pin_device_single_edge():
    g = build_pin_graph(circuit_of([two_pin("R1", "a", "b")]))
    assert g.edges == (("R1A", "R1B"),)


def test_shared_net_is_star_not_clique():
    # four pins on one internal net: 3 star edges, not 6 pairwise
    devs = [two_pin(f"R{i}", "shared", f"p{i}") for i in range(1, 5)]
    g = build_pin_graph(circuit_of(devs))
    net_edges = [e for e in g.edges if e[0][-1] == "A" and e[1][-1] == "A"]
    assert len(net_edges) == 3
    anchor = "R1A"  # lexicographically smallest member
    assert all(anchor in e for e in net_edges)


def test_terminal_is_star_anchor():
    devs = [two_pin("R1", "VDD", "x"), two_pin("R2", "VDD", "y")]
    g = build_pin_graph(circuit_of(devs))
    assert ("R1A", "VDD") in g.edges and ("R2A", "VDD") in g.edges
    assert ("R1A", "R2A") not in g.edges


def test_fixture_edge_count_matches_oracle(fixture_corpus):
    for c in fixture_corpus:
        g = build_pin_graph(c)
        assert set(g.edges) == independent_edge_set(c), c.name


def test_two_stage_opamp_frozen_constants():
    g = build_pin_graph(netlist.load_fixture("two_stage_opamp.ckt"))
    # regression constants computed once from the independent edge oracle
    assert len(g.nodes) == 40
    assert len(g.edges) == 64


def test_no_self_loops_or_parallels(fixture_graphs):
    for g in fixture_graphs:
        assert all(u != v for u, v in g.edges)
        assert len(set(g.edges)) == len(g.edges)


def test_determinism(fixture_corpus):
    for c in fixture_corpus:
        assert build_pin_graph(c) == build_pin_graph(c)


def test_per_net_star_degree():
    # clean net (members from distinct devices): anchor degree n-1 within net
    devs = [two_pin(f"C{i}", "n", f"q{i}", DeviceKind.C) for i in range(1, 6)]
    g = build_pin_graph(circuit_of(devs))
    members = {f"C{i}A" for i in range(1, 6)}
    inside = [e for e in g.edges if e[0] in members and e[1] in members]
    assert len(inside) == 4
    assert all("C1A" in e for e in inside)
    deg = g.degrees()
    assert deg["C1A"] == 1 + 4  # internal edge + star spokes


def test_connectivity_matches_naive_clique(fixture_corpus):
    # star pruning must not change which pins are connected
    import networkx as nx

    for c in fixture_corpus:
        star = nx.Graph(list(build_pin_graph(c).edges))
        naive = nx.Graph()
        for dev in c.devices:
            toks = [dev.id + r for r, _ in dev.pins]
            naive.add_edges_from(itertools.combinations(toks, 2))
        for net, members in c.nets.items():
            toks = [d + r for d, r in members]
            if is_terminal_net(net):
                toks.append(net)
            naive.add_edges_from(itertools.combinations(toks, 2))
        star_parts = {frozenset(p) for p in nx.connected_components(star)}
        naive_parts = {frozenset(p) for p in nx.connected_components(naive)}
        assert star_parts == naive_parts, c.name


def test_edge_savings_boundaries():
    # n=2 net: star equals clique
    g2 = circuit_of([two_pin("R1", "n", "a"), two_pin("R2", "n", "b")])
    pruned, naive = edge_savings(g2)
    # both devices contribute 1 internal edge (+1+2 spokes naive) and the
    # shared net has 2 members: 1 star edge vs 1 clique edge
    assert pruned == 3
    assert naive == (1 + 2) * 2 + 1

    # n=5 net: 4 star edges vs 10 clique edges
    devs = [two_pin(f"R{i}", "n", f"p{i}") for i in range(1, 6)]
    c = circuit_of(devs)
    star_pairs = pingraph.net_star_pairs(c)["n"]
    assert len(star_pairs) == 4
    pruned, naive = edge_savings(c)
    assert pruned == 5 * 1 + 4  # internal edges + star
    assert naive == 5 * (1 + 2) + 10  # pin pairs + spokes + net clique


def test_edge_savings_random_circuit_vs_bruteforce():
    c = netlist.generate_random_circuit(3, 15, CircuitType.OPAMP)
    pruned, naive = edge_savings(c)
    assert pruned == len(independent_edge_set(c))
    expect_naive = 0
    for dev in c.devices:
        k = len(dev.pins)
        expect_naive += k * (k - 1) // 2 + k
    for net, members in c.nets.items():
        n = len(members) + (1 if is_terminal_net(net) else 0)
        expect_naive += n * (n - 1) // 2
    assert naive == expect_naive
    assert pruned < naive


def test_invalid_circuit_rejected():
    with pytest.raises(InvalidCircuit):
        build_pin_graph(Circuit("x", CircuitType.OTHER, ()))
    dup = Circuit(
        "x",
        CircuitType.OTHER,
        (two_pin("R1", "a", "b"), two_pin("R1", "b", "c")),
    )
    with pytest.raises(InvalidCircuit):
        build_pin_graph(dup)


def test_token_classification():
    pin = classify_token("NM12D")
    assert pin.category == "pin" and pin.device_id == "NM12" and pin.role == "D"
    assert classify_token("Q3E").category == "pin"
    assert classify_token("VDD").category == "terminal"
    assert classify_token("VIN2").prefix == "VIN"
    sg = classify_token("SG4termB")
    assert sg.category == "subcircuit" and sg.pattern_id == "SG4"
    assert classify_token("SG1VOUT2").role == "VOUT2"
    assert classify_token("bogus") is None
    assert classify_token("NM1X") is None  # X is not a MOS role


def test_node_labels():
    assert node_label("NM1D") == "NMOS.D"
    assert node_label("Q2B") == "BJT.B"
    assert node_label("VIN3") == "VIN"
    assert node_label("SG2VDD") == "SG2.VDD"
    assert node_label("SG2::4::NMOS.G") == "NMOS.G"


def test_dump_graph_format(fixture_graphs):
    text = pingraph.dump_graph(fixture_graphs[0])
    lines = text.strip().splitlines()
    assert lines[0].startswith("# origin:")
    assert lines[1].startswith("# nodes:")
    assert len(lines) - 2 == len(fixture_graphs[0].edges)
    for line in lines[2:]:
        u, v = line.split()
        assert (u, v) in fixture_graphs[0].edges
