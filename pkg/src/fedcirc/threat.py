"""Attack models and anomaly-based defense for the federation.

Two attacks: scaling a client's submitted delta, and corrupting a client's
local sequences by random token replacement.  The defense predicts each
client's update from history (previous update plus an L-BFGS-style
Hessian-vector term over windowed global/update differences), scores
clients by normalized prediction error, and flags the high cluster of a
1-D 2-means split when it separates strongly enough.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllClientsFlagged, HistoryEmpty
from .euler import TokenSequence
from .fed import ClientUpdate, FedConfig, RoundLog, run_federation
from .lm import ModelConfig, ModelParams
from .vocab import SPECIAL_TOKENS, Vocabulary

SCALE_UPDATE = "scale_update"
TOKEN_POISON = "token_poison"


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    target_clients: frozenset[int]
    factor: float = 10.0
    poison_fraction: float = 0.3
    token_replace_prob: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (SCALE_UPDATE, TOKEN_POISON):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.factor <= 0:
            raise ValueError("factor must be > 0")
        if not 0 <= self.poison_fraction <= 1 or not 0 <= self.token_replace_prob <= 1:
            raise ValueError("poison probabilities must be in [0, 1]")


def scale_attack(update: ClientUpdate, factor: float) -> ClientUpdate:
    """Magnify the submitted delta; sample count is left untouched."""
    if factor <= 0:
        raise ValueError("factor must be > 0")
    return ClientUpdate(update.client_id, update.delta * factor, update.n_samples, update.local_loss)


def token_poison(
    dataset: list[TokenSequence],
    poison_fraction: float,
    token_replace_prob: float,
    vocab: Vocabulary,
    seed: int,
) -> list[TokenSequence]:
    """Copy-on-poison token replacement over a seeded subset of sequences.

    Inside a selected sequence every token is independently replaced, with
    the given probability, by a uniformly random different non-special
    vocabulary token.
    """
    rng = np.random.default_rng(seed)
    n_poison = int(round(poison_fraction * len(dataset)))
    chosen = set(rng.choice(len(dataset), size=n_poison, replace=False).tolist()) if n_poison else set()
    pool = [t for t in vocab.id_to_token if t not in SPECIAL_TOKENS]
    out = []
    for i, seq in enumerate(dataset):
        if i not in chosen:
            out.append(seq)
            continue
        tokens = []
        for tok in seq.tokens:
            if rng.random() < token_replace_prob:
                repl = tok
                while repl == tok:
                    repl = pool[rng.integers(len(pool))]
                tokens.append(repl)
            else:
                tokens.append(tok)
        out.append(TokenSequence(tuple(tokens), seq.closed, seq.circuit_type))
    return out


class ScaleAttackHook:
    """Per-update federation hook applying the scale attack."""

    def __init__(self, spec: AttackSpec):
        self.spec = spec
        self.target_clients = set(spec.target_clients)

    def __call__(self, round_idx: int, update: ClientUpdate) -> ClientUpdate:
        if update.client_id in self.target_clients:
            return scale_attack(update, self.spec.factor)
        return update


class PoisonTransform:
    """Dataset transform corrupting targeted clients before training."""

    def __init__(self, spec: AttackSpec, vocab: Vocabulary):
        self.spec = spec
        self.vocab = vocab
        self.target_clients = set(spec.target_clients)

    def __call__(self, client_id: int, shard: list[TokenSequence]) -> list[TokenSequence]:
        if client_id not in self.target_clients:
            return shard
        return token_poison(
            shard,
            self.spec.poison_fraction,
            self.spec.token_replace_prob,
            self.vocab,
            np.random.SeedSequence((self.spec.seed, client_id)).generate_state(1)[0],
        )


# ---------------------------------------------------------------------------
# defense


@dataclass
class DetectorState:
    """Windowed histories backing the update-consistency detector."""

    window: int = 10
    use_curvature: bool = True
    prev_global: np.ndarray | None = None
    prev_updates: dict[int, np.ndarray] = field(default_factory=dict)
    prev_mean_update: np.ndarray | None = None
    global_diffs: list[np.ndarray] = field(default_factory=list)  # delta w
    mean_update_diffs: list[np.ndarray] = field(default_factory=list)  # delta g-bar
    distance_history: list[dict[int, float]] = field(default_factory=list)

    @property
    def rounds_seen(self) -> int:
        return len(self.distance_history)


def _hessian_vector(state: DetectorState, v: np.ndarray) -> np.ndarray:
    """L-BFGS-style two-loop estimate of H @ v over the stored window.

    Pairs are (s = mean-update diff, y = global-weight diff): the inverse
    map of y -> s approximates the Hessian itself.  Near-zero curvature
    pairs are skipped; with no usable pairs or curvature disabled the term
    is zero.
    """
    if not state.use_curvature:
        return np.zeros_like(v)
    pairs = [
        (s, y)
        for s, y in zip(state.mean_update_diffs, state.global_diffs)
        if abs(float(np.dot(s, y))) > 1e-12
    ]
    if not pairs:
        return np.zeros_like(v)
    q = v.astype(np.float64).copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / float(np.dot(y, s))
        alpha = rho * float(np.dot(s, q))
        q -= alpha * y
        alphas.append((rho, alpha, s, y))
    s_last, y_last = pairs[-1]
    gamma = float(np.dot(s_last, y_last)) / max(float(np.dot(y_last, y_last)), 1e-30)
    q *= gamma
    for rho, alpha, s, y in reversed(alphas):
        beta = rho * float(np.dot(y, q))
        q += (alpha - beta) * s
    return q


def detector_score(
    state: DetectorState,
    updates: list[ClientUpdate],
    global_params: ModelParams,
) -> dict[int, float]:
    """Advance the detector one round; returns windowed suspicion scores.

    Scores are means over the window of per-round normalized distances
    between each client's actual update and its history-predicted one.
    Raises HistoryEmpty when no prior round exists yet.
    """
    deltas = {u.client_id: u.delta.astype(np.float64) for u in updates}
    mean_update = np.mean(list(deltas.values()), axis=0)
    w = global_params.flat.astype(np.float64)

    if state.prev_global is None or not state.prev_updates:
        state.prev_global = w
        state.prev_updates = deltas
        state.prev_mean_update = mean_update
        raise HistoryEmpty("detector needs one prior round of updates")

    dw = w - state.prev_global
    hv = _hessian_vector(state, dw)
    dist = {}
    for cid, delta in deltas.items():
        prev = state.prev_updates.get(cid)
        predicted = (prev + hv) if prev is not None else hv
        dist[cid] = float(np.linalg.norm(predicted - delta))
    total = sum(dist.values())
    if total <= 0:
        norm = {cid: 1.0 / len(dist) for cid in dist}
    else:
        norm = {cid: d / total for cid, d in dist.items()}
    state.distance_history.append(norm)
    state.global_diffs.append(dw)
    state.mean_update_diffs.append(mean_update - state.prev_mean_update)
    for hist in (state.distance_history, state.global_diffs, state.mean_update_diffs):
        while len(hist) > state.window:
            hist.pop(0)
    state.prev_global = w
    state.prev_updates = deltas
    state.prev_mean_update = mean_update

    clients = sorted({cid for entry in state.distance_history for cid in entry})
    return {
        cid: float(np.mean([entry[cid] for entry in state.distance_history if cid in entry]))
        for cid in clients
    }


def _two_means_split(values: list[float]) -> int:
    """Index splitting sorted values into low/high clusters with min SSE."""
    best_k, best_sse = 1, np.inf
    arr = np.asarray(values)
    for k in range(1, len(arr)):
        lo, hi = arr[:k], arr[k:]
        sse = ((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum()
        if sse < best_sse - 1e-15:
            best_sse = sse
            best_k = k
    return best_k


def flag_clients(scores: dict[int, float], threshold: float = 2.0) -> set[int]:
    """Flag the higher-mean 2-means cluster when it separates clearly.

    Separation is (mu_hi - mu_lo) / std of the pooled scores.  Because
    that ratio is scale-free, pure noise around the uniform share would
    trip it, so the high cluster must also claim an outsized share of the
    normalized distances (>= twice the mean score) before it is flagged.
    """
    if len(scores) < 2:
        return set()
    items = sorted(scores.items(), key=lambda kv: (kv[1], kv[0]))
    values = [v for _, v in items]
    std = float(np.std(values))
    k = _two_means_split(values)
    mu_lo = float(np.mean(values[:k]))
    mu_hi = float(np.mean(values[k:]))
    if mu_hi <= mu_lo or std == 0:
        return set()
    if (mu_hi - mu_lo) / std < threshold:
        return set()
    if mu_hi < 2.0 * float(np.mean(values)):
        return set()
    return {cid for cid, _ in items[k:]}


class Defense:
    """Federation hook: score every round, flag once the window is full."""

    def __init__(self, window: int = 10, threshold: float = 2.0, use_curvature: bool = True):
        self.state = DetectorState(window=window, use_curvature=use_curvature)
        self.threshold = threshold
        self.last_scores: dict[int, float] = {}

    def observe(self, round_idx: int, global_params: ModelParams, updates: list[ClientUpdate]) -> set[int]:
        try:
            self.last_scores = detector_score(self.state, updates, global_params)
        except HistoryEmpty:
            return set()
        if self.state.rounds_seen < self.state.window:
            return set()
        return flag_clients(self.last_scores, self.threshold)


def remove_and_recover(
    config: FedConfig,
    model_config: ModelConfig,
    corpus: list[TokenSequence],
    flagged: set[int],
    vocab: Vocabulary | None = None,
) -> tuple[ModelParams, list[RoundLog]]:
    """Rerun the federation with the flagged clients' shards dropped."""
    if set(flagged) >= set(range(config.n_clients)):
        raise AllClientsFlagged(sorted(flagged))
    return run_federation(
        config,
        model_config,
        corpus,
        vocab=vocab,
        exclude_clients=frozenset(flagged),
        tag="recovery",
    )
