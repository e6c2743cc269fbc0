"""Deterministic in-process federated averaging simulator.

No transport: clients are plain loops over shards of the sequence corpus.
Every source of randomness (validation holdout, partitioning, per-round
batch sampling) derives from the run seed, so a federation replay is
bit-identical and a single-client federation degenerates to sequential
SGD with the same batch schedule.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfig, ManifestMismatch, NoUpdates, TooFewSamples
from .euler import TokenSequence
from .lm import ModelConfig, ModelParams, eval_loss, init_model, train_steps
from .netlist import CircuitType
from .vocab import BOS, EOS, Vocabulary, build_vocab, encode_ids

log = logging.getLogger(__name__)

VALIDATION_SHARE = 0.1

PARTITION_SCHEMES = ("balanced", "unbalanced", "specialized")


@dataclass(frozen=True)
class FedConfig:
    n_clients: int
    rounds: int
    local_steps: int = 20
    batch_size: int = 64
    lr: float = 0.05
    partition_scheme: str = "balanced"
    dataset_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1 or self.rounds < 1 or self.local_steps < 1:
            raise InvalidConfig("n_clients, rounds and local_steps must be >= 1")
        if self.partition_scheme not in PARTITION_SCHEMES:
            raise InvalidConfig(f"unknown partition scheme {self.partition_scheme!r}")
        if not 0 < self.dataset_fraction <= 1:
            raise InvalidConfig("dataset_fraction must be in (0, 1]")


@dataclass
class ClientUpdate:
    client_id: int
    delta: np.ndarray
    n_samples: int
    local_loss: float | None


@dataclass
class RoundLog:
    round: int
    client_losses: dict[int, float]
    val_loss: float
    attacked: tuple[int, ...] = ()
    detected: tuple[int, ...] = ()
    tag: str = "clean"

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "client_losses": {str(k): v for k, v in sorted(self.client_losses.items())},
                "val_loss": self.val_loss,
                "attacked": sorted(self.attacked),
                "detected": sorted(self.detected),
                "tag": self.tag,
            }
        )


def write_round_logs(logs: list[RoundLog], path) -> None:
    with open(path, "w") as fh:
        for entry in logs:
            fh.write(entry.to_json() + "\n")


def read_round_logs(path) -> list[RoundLog]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                RoundLog(
                    obj["round"],
                    {int(k): v for k, v in obj["client_losses"].items()},
                    obj["val_loss"],
                    tuple(obj["attacked"]),
                    tuple(obj["detected"]),
                    obj.get("tag", "clean"),
                )
            )
    return out


def round_seed(seed: int, round_idx: int, client_id: int) -> int:
    """Stable per-(round, client) seed for local batch sampling."""
    return int(np.random.SeedSequence((seed, round_idx, client_id)).generate_state(1)[0])


def init_seed(seed: int) -> int:
    return int(np.random.SeedSequence((seed, 0x1217)).generate_state(1)[0])


def sequence_ids(vocab: Vocabulary, seq: TokenSequence) -> list[int]:
    """Training form: BOS, type tag when present, walk tokens, EOS."""
    ids = [BOS]
    if seq.circuit_type is not None:
        ids.append(vocab.token_to_id[seq.circuit_type.tag])
    ids.extend(encode_ids(vocab, seq.tokens))
    ids.append(EOS)
    return ids


def split_validation(corpus: list[TokenSequence], seed: int):
    """Global holdout shared by all clients (10%, seeded shuffle)."""
    rng = np.random.default_rng([seed, 0x5A11])
    order = rng.permutation(len(corpus))
    n_val = max(1, int(round(VALIDATION_SHARE * len(corpus))))
    val_idx = set(order[:n_val].tolist())
    train = [corpus[i] for i in range(len(corpus)) if i not in val_idx]
    val = [corpus[i] for i in sorted(val_idx)]
    return train, val


def partition_dataset(corpus: list[TokenSequence], config: FedConfig) -> list[list[TokenSequence]]:
    """Split the selected dataset fraction into per-client shards.

    balanced: equal-size random split.  unbalanced: Dirichlet(0.5) sizes.
    specialized: each client gets 80% of its round-robin-assigned circuit
    types plus a share of the random remainder.  Shards are disjoint and
    cover the fraction-selected corpus exactly.
    """
    if len(corpus) < config.n_clients:
        raise TooFewSamples(f"{len(corpus)} sequences for {config.n_clients} clients")
    rng = np.random.default_rng([config.seed, 0x9A97])
    n_take = max(config.n_clients, int(round(config.dataset_fraction * len(corpus))))
    selected = sorted(rng.choice(len(corpus), size=n_take, replace=False).tolist())
    items = [corpus[i] for i in selected]
    n, k = len(items), config.n_clients

    if config.partition_scheme == "balanced":
        order = rng.permutation(n)
        bounds = np.linspace(0, n, k + 1).astype(int)
        shards = [[items[j] for j in order[bounds[i] : bounds[i + 1]]] for i in range(k)]
    elif config.partition_scheme == "unbalanced":
        props = rng.dirichlet(np.full(k, 0.5))
        sizes = np.maximum(1, np.floor(props * n).astype(int))
        while sizes.sum() > n:
            sizes[int(np.argmax(sizes))] -= 1
        while sizes.sum() < n:
            sizes[int(np.argmin(sizes))] += 1
        order = rng.permutation(n)
        shards, pos = [], 0
        for size in sizes:
            shards.append([items[j] for j in order[pos : pos + size]])
            pos += size
    else:  # specialized
        types = sorted({s.circuit_type for s in items if s.circuit_type}, key=lambda t: t.value)
        assigned: dict[CircuitType, int] = {t: i % k for i, t in enumerate(types)}
        shards = [[] for _ in range(k)]
        remainder = []
        for ctype in types:
            members = [s for s in items if s.circuit_type == ctype]
            order = rng.permutation(len(members))
            n_core = int(round(0.8 * len(members)))
            core, rest = order[:n_core], order[n_core:]
            shards[assigned[ctype]].extend(members[j] for j in core)
            remainder.extend(members[j] for j in rest)
        remainder.extend(s for s in items if s.circuit_type is None)
        order = rng.permutation(len(remainder))
        for pos, j in enumerate(order):
            shards[pos % k].append(remainder[j])
        for i in range(k):  # every client trains on something
            if not shards[i]:
                donor = max(range(k), key=lambda c: len(shards[c]))
                shards[i].append(shards[donor].pop())
    return shards


def local_update(
    dataset: list[list[int]],
    global_params: ModelParams,
    steps: int,
    batch_size: int,
    lr: float,
    seed: int,
    client_id: int = 0,
) -> ClientUpdate:
    new_params, mean_loss = train_steps(global_params, dataset, steps, batch_size, lr, seed)
    return ClientUpdate(client_id, new_params.flat - global_params.flat, len(dataset), mean_loss)


def fedavg_aggregate(global_params: ModelParams, updates: list[ClientUpdate]) -> ModelParams:
    """global + sum_i (n_i / sum n) * delta_i, summed in client-id order."""
    if not updates:
        raise NoUpdates("no client updates to aggregate")
    size = global_params.flat.size
    for u in updates:
        if u.delta.shape != (size,):
            raise ManifestMismatch(f"client {u.client_id}: delta shape {u.delta.shape}")
    total = float(sum(u.n_samples for u in updates))
    merged = np.zeros_like(global_params.flat)
    for u in sorted(updates, key=lambda u: u.client_id):
        weight = global_params.flat.dtype.type(u.n_samples / total)
        merged += weight * u.delta
    return ModelParams(global_params.config, global_params.flat + merged)


def _encode_shard(vocab: Vocabulary, shard: list[TokenSequence], context_len: int):
    ids = []
    dropped = 0
    for seq in shard:
        encoded = sequence_ids(vocab, seq)
        if len(encoded) > context_len:
            dropped += 1
            continue
        ids.append(encoded)
    if dropped:
        log.warning("dropped %d sequences longer than context_len", dropped)
    return ids


def run_federation(
    config: FedConfig,
    model_config: ModelConfig,
    corpus: list[TokenSequence],
    vocab: Vocabulary | None = None,
    attack=None,
    defense=None,
    dataset_transform=None,
    exclude_clients: frozenset[int] | set[int] = frozenset(),
    init_params: ModelParams | None = None,
    tag: str = "clean",
) -> tuple[ModelParams, list[RoundLog]]:
    """Simulate `config.rounds` of broadcast / local SGD / FedAvg.

    `attack` is an optional per-update hook (round, update) -> update with
    a `target_clients` attribute; `defense` observes (round, params,
    updates) and returns the flagged client set for the round's log;
    `dataset_transform(client_id, shard)` can corrupt local data before
    training.  Excluded clients' shards are dropped entirely.
    """
    if vocab is None:
        vocab = build_vocab(corpus)
    train, val = split_validation(corpus, config.seed)
    shards = partition_dataset(train, config)
    active = [i for i in range(config.n_clients) if i not in set(exclude_clients)]
    if not active:
        raise NoUpdates("every client is excluded")

    if dataset_transform is not None:
        shards = [
            dataset_transform(i, shard) if i in active else shard
            for i, shard in enumerate(shards)
        ]
    client_data = {i: _encode_shard(vocab, shards[i], model_config.context_len) for i in active}
    for i in active:
        if not client_data[i]:
            raise TooFewSamples(f"client {i} has no usable sequences")
    val_ids = _encode_shard(vocab, val, model_config.context_len)
    if not val_ids:
        raise TooFewSamples("validation split is empty")

    params = init_params.copy() if init_params is not None else init_model(model_config, init_seed(config.seed))
    logs: list[RoundLog] = []
    for rnd in range(config.rounds):
        updates = []
        for cid in active:
            upd = local_update(
                client_data[cid],
                params,
                config.local_steps,
                config.batch_size,
                config.lr,
                round_seed(config.seed, rnd, cid),
                client_id=cid,
            )
            updates.append(upd)
        attacked: tuple[int, ...] = ()
        if attack is not None:
            updates = [attack(rnd, u) for u in updates]
            attacked = tuple(sorted(set(attack.target_clients) & set(active)))
        detected: tuple[int, ...] = ()
        if defense is not None:
            detected = tuple(sorted(defense.observe(rnd, params, updates)))
        params = fedavg_aggregate(params, updates)
        logs.append(
            RoundLog(
                rnd,
                {u.client_id: u.local_loss for u in updates},
                eval_loss(params, val_ids),
                attacked,
                detected,
                tag,
            )
        )
    return params, logs


def centralized_train(
    config: FedConfig,
    model_config: ModelConfig,
    corpus: list[TokenSequence],
    vocab: Vocabulary | None = None,
) -> tuple[ModelParams, list[RoundLog]]:
    """Single-worker baseline on the same split, schedule and seeds.

    Runs config.rounds blocks of config.local_steps steps, reseeding each
    block exactly like federated client 0, so a 1-client federation is
    bit-identical to this.
    """
    if vocab is None:
        vocab = build_vocab(corpus)
    train, val = split_validation(corpus, config.seed)
    # shard through the same 1-client partition so the batch schedule is
    # index-identical to a single-client federation
    shard = partition_dataset(train, replace(config, n_clients=1))[0]
    data = _encode_shard(vocab, shard, model_config.context_len)
    val_ids = _encode_shard(vocab, val, model_config.context_len)
    params = init_model(model_config, init_seed(config.seed))
    logs = []
    for rnd in range(config.rounds):
        local, mean_loss = train_steps(
            params,
            data,
            config.local_steps,
            config.batch_size,
            config.lr,
            round_seed(config.seed, rnd, 0),
        )
        # apply the round as a delta, like the aggregation step does:
        # g + (l - g) is not an IEEE identity, so chaining `local` directly
        # would drift from a 1-client federation by an ulp per round
        params = ModelParams(model_config, params.flat + (local.flat - params.flat))
        logs.append(RoundLog(rnd, {0: mean_loss}, eval_loss(params, val_ids), tag="centralized"))
    return params, logs
