import pytest

from fedcirc import vocab as vocab_mod
from fedcirc.errors import EmptyCorpus, IdOutOfRange
from fedcirc.euler import TokenSequence
from fedcirc.netlist import CircuitType
from fedcirc.vocab import BOS, EOS, PAD, UNK, build_vocab, decode_ids, encode_ids

from conftest import make_desk_corpus


def seq(tokens, ctype=CircuitType.OPAMP):
    return TokenSequence(tuple(tokens), True, ctype)


def test_minimal_corpus_size():
    v = build_vocab([seq(["A", "B", "A"])])
    # 4 specials + 1 type tag + 2 distinct tokens
    assert v.size == 7
    assert v.id_to_token[:4] == ("<PAD>", "<BOS>", "<EOS>", "<UNK>")
    assert v.id_to_token[4] == "<OPAMP>"
    assert v.id_to_token[5:] == ("A", "B")


def test_specials_fixed():
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)


def test_order_independence():
    a = seq(["A", "B", "A"])
    b = seq(["C", "B", "C"], CircuitType.VCO)
    assert build_vocab([a, b]) == build_vocab([b, a])


def test_rebuild_identical(desk_seqs):
    assert build_vocab(desk_seqs) == build_vocab(list(desk_seqs))


def test_roundtrip_and_unk(desk_seqs, desk_vocab):
    for s in desk_seqs[:20]:
        ids = encode_ids(desk_vocab, s.tokens)
        assert decode_ids(desk_vocab, ids) == list(s.tokens)
    assert encode_ids(desk_vocab, ["definitely_not_a_token"]) == [UNK]
    assert decode_ids(desk_vocab, [UNK]) == ["<UNK>"]


def test_decode_out_of_range(desk_vocab):
    with pytest.raises(IdOutOfRange):
        decode_ids(desk_vocab, [desk_vocab.size])
    with pytest.raises(IdOutOfRange):
        decode_ids(desk_vocab, [-1])


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab([])


def test_synthetic_200_circuit_vocab_regression():
    corpus = make_desk_corpus(n=200)
    v = build_vocab(corpus)
    # frozen after a one-time corpus build; guards tokenizer and generator
    assert v.size == 73


def test_save_load_roundtrip(tmp_path, desk_vocab):
    path = tmp_path / "vocab.tsv"
    vocab_mod.save_vocab(desk_vocab, path)
    assert vocab_mod.load_vocab(path) == desk_vocab


def test_tag_ids(desk_vocab):
    tags = desk_vocab.tag_ids()
    assert tags, "desk corpus carries type tags"
    assert all(desk_vocab.id_to_token[i].startswith("<") for i in tags)
