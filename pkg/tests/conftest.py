import logging
import os
import sys
from pathlib import Path

# tiny matmuls dominate; multithreaded BLAS only adds overhead here
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedcirc import euler, netlist, pingraph, vocab as vocab_mod

logging.getLogger("fedcirc.euler").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def fixture_corpus():
    return netlist.load_fixture_corpus()


@pytest.fixture(scope="session")
def fixture_graphs(fixture_corpus):
    return [pingraph.build_pin_graph(c) for c in fixture_corpus]


@pytest.fixture(scope="session")
def fixture_seqs(fixture_corpus):
    return [euler.encode(c) for c in fixture_corpus]


def make_desk_corpus(n=60, seed0=0):
    """Small deterministic mixed-type corpus of random circuits."""
    types = [
        netlist.CircuitType.OPAMP,
        netlist.CircuitType.MIXER,
        netlist.CircuitType.VCO,
        netlist.CircuitType.LDO,
    ]
    seqs = []
    for s in range(seed0, seed0 + n):
        c = netlist.generate_random_circuit(s, 4 + s % 4, types[s % len(types)])
        seqs.append(euler.encode(c))
    return seqs


@pytest.fixture(scope="session")
def desk_seqs():
    return make_desk_corpus()


@pytest.fixture(scope="session")
def desk_vocab(desk_seqs):
    return vocab_mod.build_vocab(desk_seqs)
