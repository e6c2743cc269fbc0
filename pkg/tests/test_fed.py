import numpy as np
import pytest

from fedcirc import fed, lm
from fedcirc.errors import InvalidConfig, ManifestMismatch, NoUpdates, TooFewSamples
from fedcirc.fed import (
    ClientUpdate,
    FedConfig,
    centralized_train,
    fedavg_aggregate,
    local_update,
    partition_dataset,
    round_seed,
    run_federation,
    sequence_ids,
    split_validation,
)
from fedcirc.netlist import CircuitType

from conftest import make_desk_corpus

MICRO = lm.ModelConfig(1, 2, 16, 128, 80, dtype="float64")


@pytest.fixture(scope="module")
def corpus():
    return make_desk_corpus(n=60)


@pytest.fixture(scope="module")
def vocab(corpus):
    from fedcirc.vocab import build_vocab

    return build_vocab(corpus)


def model_for(vocab):
    return lm.ModelConfig(1, 2, 16, 160, vocab.size, dtype="float64")


def test_fed_config_validation():
    with pytest.raises(InvalidConfig):
        FedConfig(n_clients=0, rounds=1)
    with pytest.raises(InvalidConfig):
        FedConfig(n_clients=1, rounds=0)
    with pytest.raises(InvalidConfig):
        FedConfig(n_clients=1, rounds=1, partition_scheme="bogus")
    with pytest.raises(InvalidConfig):
        FedConfig(n_clients=1, rounds=1, dataset_fraction=0.0)


def test_partition_single_client(corpus):
    cfg = FedConfig(n_clients=1, rounds=1, seed=4)
    (shard,) = partition_dataset(corpus, cfg)
    assert sorted(s.tokens for s in shard) == sorted(s.tokens for s in corpus)


def test_partition_balanced_split():
    corpus = make_desk_corpus(n=300)
    cfg = FedConfig(n_clients=6, rounds=1, seed=0)
    shards = partition_dataset(corpus, cfg)
    assert [len(s) for s in shards] == [50] * 6
    seen = [s.tokens for shard in shards for s in shard]
    assert len(seen) == 300
    assert sorted(seen) == sorted(s.tokens for s in corpus)


def test_partition_fraction_and_disjoint(corpus):
    cfg = FedConfig(n_clients=3, rounds=1, dataset_fraction=1 / 3, seed=2)
    shards = partition_dataset(corpus, cfg)
    total = sum(len(s) for s in shards)
    assert total == round(len(corpus) / 3)


def test_partition_unbalanced(corpus):
    cfg = FedConfig(n_clients=4, rounds=1, partition_scheme="unbalanced", seed=5)
    shards = partition_dataset(corpus, cfg)
    sizes = [len(s) for s in shards]
    assert sum(sizes) == len(corpus)
    assert min(sizes) >= 1
    assert max(sizes) > min(sizes)  # Dirichlet(0.5) split is uneven


def test_partition_specialized(corpus):
    cfg = FedConfig(n_clients=3, rounds=1, partition_scheme="specialized", seed=1)
    shards = partition_dataset(corpus, cfg)
    types = sorted({s.circuit_type for s in corpus}, key=lambda t: t.value)
    assigned = {t: i % 3 for i, t in enumerate(types)}
    # client 0's shard is dominated by its assigned types
    own = [t for t, c in assigned.items() if c == 0]
    shard0 = shards[0]
    frac = sum(s.circuit_type in own for s in shard0) / len(shard0)
    assert frac >= 0.8
    assert sum(len(s) for s in shards) == len(corpus)


def test_partition_deterministic(corpus):
    cfg = FedConfig(n_clients=4, rounds=1, seed=9)
    a = partition_dataset(corpus, cfg)
    b = partition_dataset(corpus, cfg)
    assert [[s.tokens for s in shard] for shard in a] == [
        [s.tokens for s in shard] for shard in b
    ]


def test_partition_too_few(corpus):
    with pytest.raises(TooFewSamples):
        partition_dataset(corpus[:3], FedConfig(n_clients=4, rounds=1))


def test_local_update_zero_lr(corpus, vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 0)
    data = [sequence_ids(vocab, s) for s in corpus[:10]]
    upd = local_update(data, params, 3, 4, 0.0, 0, client_id=2)
    assert not upd.delta.any()
    assert upd.n_samples == 10
    assert upd.client_id == 2
    upd2 = local_update(data, params, 3, 4, 0.1, 0)
    assert np.isfinite(upd2.delta).all() and upd2.delta.any()


def test_identical_clients_identical_deltas(corpus, vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 0)
    data = [sequence_ids(vocab, s) for s in corpus[:8]]
    a = local_update(data, params, 4, 4, 0.1, 123, client_id=0)
    b = local_update(data, params, 4, 4, 0.1, 123, client_id=1)
    assert np.array_equal(a.delta, b.delta)


def test_fedavg_cancellation(vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 1)
    d = np.random.default_rng(0).normal(size=params.flat.size)
    ups = [ClientUpdate(0, d, 5, 1.0), ClientUpdate(1, -d, 5, 1.0)]
    out = fedavg_aggregate(params, ups)
    assert np.allclose(out.flat, params.flat, atol=1e-12)


def test_fedavg_single_client_weight_one(vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 1)
    d = np.random.default_rng(0).normal(size=params.flat.size)
    out = fedavg_aggregate(params, [ClientUpdate(0, d, 3, 1.0)])
    assert np.array_equal(out.flat, params.flat + d)


def test_fedavg_weighted_mean(vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 1)
    d = np.ones(params.flat.size)
    zero = np.zeros_like(d)
    out = fedavg_aggregate(params, [ClientUpdate(0, d, 3, 1.0), ClientUpdate(1, zero, 1, 1.0)])
    assert np.allclose(out.flat - params.flat, 0.75)


def test_fedavg_zero_deltas_identity(vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 1)
    zero = np.zeros(params.flat.size)
    ups = [ClientUpdate(i, zero, 2, 1.0) for i in range(3)]
    out = fedavg_aggregate(params, ups)
    assert np.array_equal(out.flat, params.flat)


def test_fedavg_errors(vocab):
    mc = model_for(vocab)
    params = lm.init_model(mc, 1)
    with pytest.raises(NoUpdates):
        fedavg_aggregate(params, [])
    with pytest.raises(ManifestMismatch):
        fedavg_aggregate(params, [ClientUpdate(0, np.zeros(3), 1, 1.0)])


def test_split_validation_holdout(corpus):
    train, val = split_validation(corpus, 0)
    assert len(val) == round(0.1 * len(corpus))
    assert len(train) + len(val) == len(corpus)
    train2, val2 = split_validation(corpus, 0)
    assert [s.tokens for s in val] == [s.tokens for s in val2]


def test_single_client_federation_equals_centralized(corpus, vocab):
    mc = model_for(vocab)
    cfg = FedConfig(n_clients=1, rounds=3, local_steps=4, batch_size=4, lr=0.1, seed=6)
    p_fed, logs_fed = run_federation(cfg, mc, corpus, vocab)
    p_cent, logs_cent = centralized_train(cfg, mc, corpus, vocab)
    assert np.array_equal(p_fed.flat, p_cent.flat)
    assert [l.val_loss for l in logs_fed] == [l.val_loss for l in logs_cent]


def test_run_federation_log_shape_and_determinism(corpus, vocab):
    mc = model_for(vocab)
    cfg = FedConfig(n_clients=3, rounds=4, local_steps=2, batch_size=4, lr=0.1, seed=8)
    p1, logs1 = run_federation(cfg, mc, corpus, vocab)
    p2, logs2 = run_federation(cfg, mc, corpus, vocab)
    assert len(logs1) == cfg.rounds
    assert np.array_equal(p1.flat, p2.flat)
    assert [l.val_loss for l in logs1] == [l.val_loss for l in logs2]
    assert all(sorted(l.client_losses) == [0, 1, 2] for l in logs1)


def test_round_logs_io(tmp_path, corpus, vocab):
    mc = model_for(vocab)
    cfg = FedConfig(n_clients=2, rounds=2, local_steps=2, batch_size=4, lr=0.1, seed=0)
    _, logs = run_federation(cfg, mc, corpus, vocab)
    path = tmp_path / "logs.jsonl"
    fed.write_round_logs(logs, path)
    back = fed.read_round_logs(path)
    assert [l.round for l in back] == [0, 1]
    assert back[0].client_losses == logs[0].client_losses
    assert back[0].val_loss == logs[0].val_loss


def test_round_seed_stable():
    assert round_seed(1, 2, 3) == round_seed(1, 2, 3)
    assert round_seed(1, 2, 3) != round_seed(1, 2, 4)
    assert round_seed(1, 2, 3) != round_seed(2, 2, 3)


def test_sequence_ids_layout(vocab, corpus):
    ids = sequence_ids(vocab, corpus[0])
    assert ids[0] == 1  # BOS
    assert ids[-1] == 2  # EOS
    assert vocab.id_to_token[ids[1]] == corpus[0].circuit_type.tag
