import itertools

import pytest

from fedcirc import euler, netlist, pingraph
from fedcirc.errors import (
    DisconnectedGraph,
    EmptySequence,
    NotEulerian,
    SelfLoopToken,
    StartNotInGraph,
    UnknownToken,
)
from fedcirc.euler import (
    TokenSequence,
    augment,
    compression_rate,
    decode,
    encode,
    eulerian_circuit,
    eulerize,
    legacy_encode,
    odd_vertices,
)
from fedcirc.netlist import Circuit, CircuitType, Device, DeviceKind
from fedcirc.pingraph import CircuitGraph

from oracles import min_duplication_count


def graph_of(edges):
    return CircuitGraph.from_edges(edges)


TRIANGLE = graph_of([("A", "B"), ("B", "C"), ("A", "C")])
PATH = graph_of([("A", "B"), ("B", "C")])
K4 = graph_of(list(itertools.combinations("ABCD", 2)))


def test_odd_vertices():
    assert odd_vertices(TRIANGLE) == set()
    assert odd_vertices(PATH) == {"A", "C"}
    assert odd_vertices(K4) == {"A", "B", "C", "D"}


def test_handshake_lemma_random():
    import numpy as np

    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        nodes = [f"v{i}" for i in range(n)]
        pairs = list(itertools.combinations(nodes, 2))
        take = rng.random(len(pairs)) < 0.4
        edges = [p for p, t in zip(pairs, take) if t]
        if not edges:
            continue
        assert len(odd_vertices(graph_of(edges))) % 2 == 0


def test_eulerize_already_even():
    mg, dup = eulerize(TRIANGLE)
    assert dup == []
    assert mg.edges == TRIANGLE.edges


def test_eulerize_path_matches_bruteforce():
    mg, dup = eulerize(PATH)
    assert len(dup) == min_duplication_count([("A", "B"), ("B", "C")]) == 2
    assert sorted(dup) == [("A", "B"), ("B", "C")]
    assert all(d % 2 == 0 for d in mg.degrees().values())


def test_eulerize_k4_matches_bruteforce():
    edges = list(itertools.combinations("ABCD", 2))
    mg, dup = eulerize(K4)
    assert len(dup) == min_duplication_count(edges) == 2
    assert all(d % 2 == 0 for d in mg.degrees().values())


def test_eulerize_disconnected():
    with pytest.raises(DisconnectedGraph):
        eulerize(graph_of([("A", "B"), ("C", "D")]))


def test_eulerian_circuit_triangle():
    seq = eulerian_circuit(TRIANGLE, "A", 0)
    assert list(seq.tokens) == ["A", "B", "C", "A"]
    assert seq.closed


def test_eulerian_circuit_covers_every_edge_once():
    mg, _ = eulerize(K4)
    seq = eulerian_circuit(mg, "A", 0)
    walked = sorted(
        tuple(sorted(p)) for p in itertools.pairwise(seq.tokens)
    )
    assert walked == sorted(mg.edges)
    assert len(seq) == len(mg.edges) + 1


def test_eulerian_circuit_errors():
    with pytest.raises(StartNotInGraph):
        eulerian_circuit(TRIANGLE, "Z", 0)
    with pytest.raises(NotEulerian):
        eulerian_circuit(PATH, "A", 0)


def test_encode_single_mos_is_cycle_walk():
    c = Circuit(
        "single",
        CircuitType.OTHER,
        (Device("NM1", DeviceKind.NMOS, (("D", "a"), ("G", "b"), ("S", "c"), ("B", "d"))),),
    )
    seq = encode(c)
    assert len(seq) == 5  # 4 cycle edges + closing token
    assert seq.tokens[0] == seq.tokens[-1] == "NM1B"  # lexicographic start


def test_encode_deterministic(fixture_corpus):
    for c in fixture_corpus[:4]:
        assert encode(c) == encode(c)


def test_encode_walk_length_identity(fixture_corpus):
    c = netlist.load_fixture("two_stage_opamp.ckt")
    g = pingraph.build_pin_graph(c)
    mg, _ = eulerize(g)
    assert len(encode(c)) == len(mg.edges) + 1


def test_decode_triangle():
    g = decode(["A", "B", "C", "A"])
    assert set(g.simple_edges) == {("A", "B"), ("B", "C"), ("A", "C")}


def test_decode_errors():
    with pytest.raises(SelfLoopToken):
        decode(["NM1D", "NM1D", "NM1G"])
    from fedcirc.vocab import Vocabulary

    vocab = Vocabulary(("<PAD>", "<BOS>", "<EOS>", "<UNK>", "A", "B"))
    with pytest.raises(UnknownToken):
        decode(["A", "Z"], vocab=vocab)


def test_decode_collapses_duplicate_walk_edges():
    g = decode(["A", "B", "A", "B", "C"])
    assert set(g.simple_edges) == {("A", "B"), ("B", "C")}


def test_roundtrip_fixtures(fixture_corpus):
    for c in fixture_corpus:
        g = pingraph.build_pin_graph(c)
        d = decode(encode(c))
        assert d.nodes == g.nodes and set(d.simple_edges) == set(g.simple_edges)


def test_roundtrip_random_sample():
    for seed in range(40):
        c = netlist.generate_random_circuit(seed, 3 + seed % 9, CircuitType.LNA)
        g = pingraph.build_pin_graph(c)
        d = decode(encode(c))
        assert d.nodes == g.nodes and set(d.simple_edges) == set(g.simple_edges)


def test_augment_base_case(fixture_corpus):
    c = fixture_corpus[0]
    assert augment(c, 1) == [encode(c)]


def test_augment_decodes_isomorphic(fixture_corpus):
    c = fixture_corpus[2]
    g = pingraph.build_pin_graph(c)
    seqs = augment(c, 6)
    assert len(seqs) >= 2
    for seq in seqs:
        d = decode(seq)
        assert d.nodes == g.nodes and set(d.simple_edges) == set(g.simple_edges)


def test_augment_triangle_dedup():
    # a triangle has exactly 6 closed euler walks (3 starts x 2 directions)
    c = Circuit(
        "tri",
        CircuitType.OTHER,
        (Device("Q1", DeviceKind.NPN, (("C", "x"), ("B", "y"), ("E", "z"))),),
    )
    all_walks = set()
    for start in ("Q1B", "Q1C", "Q1E"):
        for mid in ("Q1B", "Q1C", "Q1E"):
            if mid == start:
                continue
            last = ({"Q1B", "Q1C", "Q1E"} - {start, mid}).pop()
            all_walks.add((start, mid, last, start))
    assert len(all_walks) == 6
    seqs = augment(c, 12)
    assert 1 <= len(seqs) <= 6
    assert all(s.tokens in all_walks for s in seqs)


def test_compression_rate_identity_and_errors():
    seq = TokenSequence(("A", "B", "A"), True)
    assert compression_rate(seq, seq) == 1.0
    with pytest.raises(EmptySequence):
        compression_rate(TokenSequence((), False), seq)


def test_compression_shared_net_beats_legacy():
    devs = tuple(
        Device(f"R{i}", DeviceKind.R, (("A", "n"), ("B", f"p{i}"))) for i in range(1, 6)
    )
    c = Circuit("star5", CircuitType.OTHER, devs)
    assert compression_rate(legacy_encode(c), encode(c)) > 1.0


def test_compression_monotone_on_fixtures(fixture_corpus):
    rates = [compression_rate(legacy_encode(c), encode(c)) for c in fixture_corpus]
    assert all(r >= 1.0 for r in rates)


def test_sequence_file_roundtrip(tmp_path, fixture_seqs):
    path = tmp_path / "corpus.seq"
    euler.save_sequences(fixture_seqs, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(fixture_seqs)
    assert lines[0].split()[0].startswith("<")
    back = euler.load_sequences(path)
    assert [s.tokens for s in back] == [s.tokens for s in fixture_seqs]
    assert [s.circuit_type for s in back] == [s.circuit_type for s in fixture_seqs]
