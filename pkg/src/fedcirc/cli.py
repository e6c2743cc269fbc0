"""Command-line interface: encode, mine, train, fed, generate, eval, stats.

Machine-readable results go to stdout as JSON; human summaries go to
stderr.  Exit codes: 0 ok, 1 usage, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import click
import numpy as np

from . import euler, fed, lm, metrics, mining, netlist, threat, vocab as vocab_mod
from .errors import ConfigError, DataError, EmptyCorpus, FedcircError

# ---------------------------------------------------------------------------
# experiment config: flat `key = value` file, unknown keys rejected


_SCHEMA: dict[str, tuple] = {
    # (default, parser)
    "data.corpus": ("", str),
    "data.patterns": ("", str),
    "data.augment": (1, int),
    "out.dir": (".", str),
    "model.n_layers": (2, int),
    "model.n_heads": (2, int),
    "model.d_model": (64, int),
    "model.context_len": (256, int),
    "model.dtype": ("float32", str),
    "model.tie_output": (False, None),
    "fed.n_clients": (4, int),
    "fed.rounds": (50, int),
    "fed.local_steps": (20, int),
    "fed.batch_size": (64, int),
    "fed.lr": (0.05, float),
    "fed.partition": ("balanced", str),
    "fed.fraction": (1.0, float),
    "fed.seed": (0, int),
    "attack.kind": ("none", str),
    "attack.clients": ("", str),
    "attack.factor": (10.0, float),
    "attack.poison_fraction": (0.3, float),
    "attack.replace_prob": (0.2, float),
    "attack.seed": (0, int),
    "defense.enabled": (False, None),
    "defense.window": (10, int),
    "defense.threshold": (2.0, float),
    "defense.curvature": (True, None),
}

_PATH_KEYS = ("data.corpus", "data.patterns", "out.dir")


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


@dataclass
class ExperimentConfig:
    values: dict
    base_dir: Path

    def __getitem__(self, key: str):
        return self.values[key]

    def path(self, key: str) -> Path | None:
        raw = self.values[key]
        if not raw:
            return None
        return (self.base_dir / raw).resolve()

    def fed_config(self) -> fed.FedConfig:
        return fed.FedConfig(
            n_clients=self["fed.n_clients"],
            rounds=self["fed.rounds"],
            local_steps=self["fed.local_steps"],
            batch_size=self["fed.batch_size"],
            lr=self["fed.lr"],
            partition_scheme=self["fed.partition"],
            dataset_fraction=self["fed.fraction"],
            seed=self["fed.seed"],
        )

    def model_config(self, vocab_size: int) -> lm.ModelConfig:
        return lm.ModelConfig(
            n_layers=self["model.n_layers"],
            n_heads=self["model.n_heads"],
            d_model=self["model.d_model"],
            context_len=self["model.context_len"],
            vocab_size=vocab_size,
            tie_output=self["model.tie_output"],
            dtype=self["model.dtype"],
        )

    def attack_clients(self) -> frozenset[int]:
        raw = self["attack.clients"].strip()
        return frozenset(int(x) for x in raw.split(",") if x.strip()) if raw else frozenset()


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    values = {key: default for key, (default, _) in _SCHEMA.items()}
    unknown = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            unknown.append(key)
            continue
        _, parser = _SCHEMA[key]
        try:
            values[key] = _parse_bool(val) if parser is None else parser(val)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(values, path.parent)


CONFIG_KEYS_HELP = "Config keys (flat `key = value` file):\n" + "\n".join(
    f"  {key}  (default: {default!r})" for key, (default, _) in _SCHEMA.items()
)


# ---------------------------------------------------------------------------
# shared loading helpers


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


def _say(msg: str) -> None:
    click.echo(msg, err=True)


def _load_corpus_circuits(path: Path) -> list[netlist.Circuit]:
    files = sorted(path.glob("*.ckt"))
    if not files:
        raise EmptyCorpus(f"no .ckt files in {path}")
    return [netlist.parse_netlist(f.read_text()) for f in files]


def _load_sequences(config: ExperimentConfig) -> list[euler.TokenSequence]:
    corpus = config.path("data.corpus")
    if corpus is None:
        raise ConfigError("data.corpus is required")
    patterns = _load_patterns(config.path("data.patterns"))
    if corpus.is_dir():
        seqs = []
        for circuit in _load_corpus_circuits(corpus):
            seqs.extend(euler.augment(circuit, config["data.augment"], patterns))
        return seqs
    return euler.load_sequences(corpus)


def _load_patterns(path: Path | None):
    if path is None:
        return None
    return mining.load_pattern_library(path)


def _train_outputs(out_dir: Path, params, vocab, logs, prefix: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    lm.save_checkpoint(params, out_dir / f"{prefix}_model.ckpt")
    vocab_mod.save_vocab(vocab, out_dir / "vocab.tsv")
    fed.write_round_logs(logs, out_dir / f"{prefix}_logs.jsonl")


# ---------------------------------------------------------------------------
# commands


@click.group()
def cli():
    """Pipeline for federated circuit-topology generation."""


@cli.command("encode")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("-o", "--out", required=True, type=click.Path(path_type=Path))
@click.option("--patterns", type=click.Path(exists=True, path_type=Path))
@click.option("--augment", "augment_k", default=1, show_default=True)
@click.option("--dump-graph", type=click.Path(file_okay=False, path_type=Path))
@click.option("--skip-bad", is_flag=True, help="Skip unparseable netlists instead of failing.")
def cmd_encode(corpus_dir, out, patterns, augment_k, dump_graph, skip_bad):
    """Encode a directory of netlists into a token sequence file."""
    library = _load_patterns(patterns)
    files = sorted(corpus_dir.glob("*.ckt"))
    if not files:
        raise EmptyCorpus(f"no .ckt files in {corpus_dir}")
    seqs, rates, failed = [], [], []
    for f in files:
        try:
            circuit = netlist.parse_netlist(f.read_text())
        except DataError as exc:
            failed.append(f.name)
            _say(f"parse failed: {f.name}: {exc}")
            continue
        new = euler.augment(circuit, augment_k, library)
        seqs.extend(new)
        rates.append(euler.compression_rate(euler.legacy_encode(circuit), new[0]))
        if dump_graph:
            dump_graph.mkdir(parents=True, exist_ok=True)
            from .pingraph import build_pin_graph, dump_graph as render_dump

            (dump_graph / f"{f.stem}.graph").write_text(render_dump(build_pin_graph(circuit)))
    if failed and not skip_bad:
        raise DataError(f"{len(failed)} netlists failed to parse: {', '.join(failed)}")
    euler.save_sequences(seqs, out)
    _say(f"encoded {len(files) - len(failed)}/{len(files)} circuits -> {out}")
    _emit(
        {
            "n_files": len(files),
            "n_failed": len(failed),
            "n_sequences": len(seqs),
            "total_tokens": sum(len(s) for s in seqs),
            "mean_compression": float(np.mean(rates)) if rates else None,
            "min_compression": float(np.min(rates)) if rates else None,
        }
    )


@cli.command("mine")
@click.argument("corpus", type=click.Path(exists=True, path_type=Path))
@click.option("-o", "--out", required=True, type=click.Path(path_type=Path))
@click.option("--support", default=mining.DEFAULT_MIN_SUPPORT, show_default=True)
@click.option("--max-edges", default=mining.DEFAULT_MAX_EDGES, show_default=True)
@click.option("--isolation", default=mining.DEFAULT_ISOLATION_THRESHOLD, show_default=True)
def cmd_mine(corpus, out, support, max_edges, isolation):
    """Mine frequent subgraphs into a pattern library file."""
    if not 0 < support <= 1:
        raise click.BadParameter("support must be in (0, 1]", param_hint="--support")
    if corpus.is_dir():
        graphs = [netlist_graph for netlist_graph in _corpus_graphs(corpus)]
    else:
        graphs = [euler.decode(seq) for seq in euler.load_sequences(corpus)]
    library = mining.build_pattern_library(graphs, support, max_edges, isolation)
    mining.save_pattern_library(library, out)
    for pat in library:
        _say(
            f"{pat.pattern_id}: support={pat.expansion.support:.3f} "
            f"edges={pat.expansion.n_edges} boundary={len(pat.interface_tokens)}"
        )
    _emit(
        {
            "n_patterns": len(library),
            "patterns": [
                {
                    "id": p.pattern_id,
                    "support": p.expansion.support,
                    "n_edges": p.expansion.n_edges,
                    "n_boundary": len(p.interface_tokens),
                }
                for p in library
            ],
        }
    )


def _corpus_graphs(path: Path):
    from .pingraph import build_pin_graph

    return [build_pin_graph(c) for c in _load_corpus_circuits(path)]


@cli.command("train", epilog=CONFIG_KEYS_HELP)
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def cmd_train(config_file):
    """Centralized training run from an experiment config."""
    config = load_experiment_config(config_file)
    seqs = _load_sequences(config)
    vocab = vocab_mod.build_vocab(seqs)
    params, logs = fed.centralized_train(config.fed_config(), config.model_config(vocab.size), seqs, vocab)
    _train_outputs(config.path("out.dir"), params, vocab, logs, "train")
    _emit({"rounds": len(logs), "final_val_loss": logs[-1].val_loss, "vocab_size": vocab.size})


@cli.command("fed", epilog=CONFIG_KEYS_HELP)
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def cmd_fed(config_file):
    """Federated training run honoring attack/defense config blocks."""
    config = load_experiment_config(config_file)
    seqs = _load_sequences(config)
    vocab = vocab_mod.build_vocab(seqs)
    fed_config = config.fed_config()
    model_config = config.model_config(vocab.size)

    attack_hook = None
    transform = None
    kind = config["attack.kind"]
    if kind != "none":
        spec = threat.AttackSpec(
            kind=kind,
            target_clients=config.attack_clients(),
            factor=config["attack.factor"],
            poison_fraction=config["attack.poison_fraction"],
            token_replace_prob=config["attack.replace_prob"],
            seed=config["attack.seed"],
        )
        if kind == threat.SCALE_UPDATE:
            attack_hook = threat.ScaleAttackHook(spec)
        else:
            transform = threat.PoisonTransform(spec, vocab)
    defense = None
    if config["defense.enabled"]:
        defense = threat.Defense(
            window=config["defense.window"],
            threshold=config["defense.threshold"],
            use_curvature=config["defense.curvature"],
        )

    params, logs = fed.run_federation(
        fed_config,
        model_config,
        seqs,
        vocab,
        attack=attack_hook,
        defense=defense,
        dataset_transform=transform,
    )
    _train_outputs(config.path("out.dir"), params, vocab, logs, "fed")
    detected = sorted({c for entry in logs for c in entry.detected})
    _emit(
        {
            "rounds": len(logs),
            "n_clients": fed_config.n_clients,
            "final_val_loss": logs[-1].val_loss,
            "detected_clients": detected,
            "vocab_size": vocab.size,
        }
    )


@cli.command("generate")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("-n", "--count", default=10, show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-len", default=0, help="0 means the model context length.")
@click.option("--type", "circuit_type", type=click.Choice([t.value for t in netlist.CircuitType]))
@click.option("-o", "--out", required=True, type=click.Path(path_type=Path))
def cmd_generate(checkpoint, vocab_path, count, temperature, seed, max_len, circuit_type, out):
    """Sample token sequences from a trained checkpoint."""
    params = lm.load_checkpoint(checkpoint)
    vocab = vocab_mod.load_vocab(vocab_path)
    prompt = netlist.CircuitType(circuit_type) if circuit_type else None
    limit = max_len or params.config.context_len
    seqs = [
        lm.generate(params, vocab, limit, temperature, seed + i, prompt_type=prompt)
        for i in range(count)
    ]
    euler.save_sequences(seqs, out)
    _say(f"wrote {len(seqs)} sequences -> {out}")
    _emit({"n_sequences": len(seqs), "mean_tokens": float(np.mean([len(s) for s in seqs])) if seqs else None})


@cli.command("eval")
@click.argument("generated", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("training", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--patterns", type=click.Path(exists=True, path_type=Path))
@click.option("--fed-log", type=click.Path(exists=True, path_type=Path), help="Round log of the run under evaluation.")
@click.option("--baseline-log", type=click.Path(exists=True, path_type=Path), help="Clean round log to compare against.")
@click.option("-o", "--out", type=click.Path(path_type=Path))
def cmd_eval(generated, training, patterns, fed_log, baseline_log, out):
    """Metrics report for generated sequences against a training corpus."""
    library = _load_patterns(patterns)
    gen = euler.load_sequences(generated)
    train = euler.load_sequences(training)
    if not train:
        raise EmptyCorpus(f"no sequences in {training}")
    report = metrics.evaluate_generation(gen, train, patterns=library)
    report["mean_generated_tokens"] = float(np.mean([len(s) for s in gen])) if gen else None
    report["mean_training_tokens"] = float(np.mean([len(s) for s in train]))
    if fed_log and baseline_log:
        ours = fed.read_round_logs(fed_log)[-1].val_loss
        base = fed.read_round_logs(baseline_log)[-1].val_loss
        report["val_loss_ratio"] = ours / base
    if out:
        Path(out).write_text(json.dumps(report, indent=2, sort_keys=True))
        _say(f"report -> {out}")
    _emit(report)


@cli.command("stats")
@click.argument("shards", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--bins", default=50, show_default=True)
@click.option("--baseline", default="global", type=click.Choice(["global", "client"]), show_default=True)
@click.option("-o", "--out-csv", type=click.Path(path_type=Path))
def cmd_stats(shards, checkpoint, vocab_path, bins, baseline, out_csv):
    """Per-client embedding heterogeneity over sequence-file shards."""
    params = lm.load_checkpoint(checkpoint)
    vocab = vocab_mod.load_vocab(vocab_path)
    datasets = [euler.load_sequences(p) for p in shards]
    stats = metrics.heterogeneity_stats(datasets, params, vocab, bins=bins, baseline=baseline)
    if out_csv:
        Path(out_csv).write_text(metrics.heterogeneity_csv(stats))
        _say(f"csv -> {out_csv}")
    _emit(
        {
            "clients": [
                {
                    "client": s.client_id,
                    "mean": s.mean,
                    "mse": s.mse,
                    "density_integral": float((s.densities * np.diff(s.bin_edges)).sum()),
                }
                for s in stats
            ]
        }
    )


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FedcircError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
