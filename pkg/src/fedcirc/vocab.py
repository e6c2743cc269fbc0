"""Token <-> id vocabulary.

Ids 0..3 are the fixed specials (PAD, BOS, EOS, UNK); type tags seen in
the corpus come next, then every corpus token in lexicographic order, so a
rebuild over the same corpus is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyCorpus, IdOutOfRange

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<PAD>", "<BOS>", "<EOS>", "<UNK>")


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]

    @property
    def token_to_id(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def tag_ids(self) -> list[int]:
        return [
            i
            for i, t in enumerate(self.id_to_token)
            if i >= len(SPECIAL_TOKENS) and t.startswith("<") and t.endswith(">")
        ]


def build_vocab(corpus) -> Vocabulary:
    """Vocabulary over a corpus of TokenSequence items."""
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    tags = sorted({seq.circuit_type.tag for seq in corpus if seq.circuit_type is not None})
    tokens = sorted({tok for seq in corpus for tok in seq.tokens})
    return Vocabulary(tuple(SPECIAL_TOKENS) + tuple(tags) + tuple(tokens))


def encode_ids(vocab: Vocabulary, tokens) -> list[int]:
    """Map tokens to ids; unknown tokens become UNK."""
    lookup = vocab.token_to_id
    return [lookup.get(tok, UNK) for tok in tokens]


def decode_ids(vocab: Vocabulary, ids) -> list[str]:
    out = []
    for i in ids:
        if not 0 <= i < vocab.size:
            raise IdOutOfRange(f"id {i} outside [0, {vocab.size})")
        out.append(vocab.id_to_token[i])
    return out


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w") as fh:
        for i, tok in enumerate(vocab.id_to_token):
            fh.write(f"{i}\t{tok}\n")


def load_vocab(path) -> Vocabulary:
    tokens = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                _, tok = line.rstrip("\n").split("\t")
                tokens.append(tok)
    return Vocabulary(tuple(tokens))
