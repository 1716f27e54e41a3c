"""Command-line entry point: ``relinfill <command> [--flags]``.

Settings resolve as flags > ``--config`` file > built-in defaults. The seed
additionally falls back to ``RELINFILL_SEED`` when neither flag nor file sets it.
Every command that produces outputs writes the effective settings to
``<out>/config-<command>.txt``; feeding that file back with ``--config``
reproduces the run.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import data_io, evaluation
from .data_io import Dataset, SynthSpec
from .decoding import CONVENTIONS, DecodeConfig, candidate_records, write_records
from .errors import ConfigError, DataError, RelinfillError
from .model import load_checkpoint, save_checkpoint
from .schema import RelationSchema, build_trie, load_schema
from .templating import STYLES, render
from .training import ABLATIONS, POOL_MODES, SUPPORTS, LblsConfig, TrainConfig, train

log = logging.getLogger("relinfill")

SEED_ENV = "RELINFILL_SEED"
COMMANDS = ("gen-data", "train", "decode", "eval", "ablate", "sweep-mu", "inspect-trie")
COMMAND_HELP = {
    "gen-data": "write a seeded synthetic corpus",
    "train": "train a model and save a checkpoint",
    "decode": "write scored candidate relations for a split",
    "eval": "micro-F1 (and optional H@M) for a split",
    "ablate": "train and test each loss variant",
    "sweep-mu": "train and test across balance factors",
    "inspect-trie": "list the relation trie layer by layer",
}
FORMATS = ("jsonl", "tacred", "nyt")
EVAL_MODES = ("threshold", "ranking", "both")
SWITCH = ("auto", "on", "off")


def _opt(default, help, choices=None, commands=None):
    return field(default=default, metadata={"help": help, "choices": choices, "commands": commands})


_DATA = ("train", "decode", "eval", "ablate", "sweep-mu")
_TRAINING = ("train", "ablate", "sweep-mu")
_DECODING = ("train", "decode", "eval", "ablate", "sweep-mu")
_GEN = ("gen-data",)


@dataclass
class RunConfig:
    out: str = _opt("runs/latest", "run directory for all outputs", commands=COMMANDS[:-1])
    seed: int = _opt(0, f"random seed (falls back to ${SEED_ENV})", commands=COMMANDS[:-1])
    # data
    data: str = _opt("", "directory holding relations.txt and <split>.jsonl", commands=_DATA)
    data_format: str = _opt("jsonl", "format of --*-file inputs", FORMATS, _DATA)
    schema: str = _opt("", "relation schema file, or 'tacred'/'nyt' for a bundled one",
                       commands=_DATA + ("inspect-trie",))
    train_file: str = _opt("", "training split file (overrides --data)", commands=_DATA)
    dev_file: str = _opt("", "dev split file (overrides --data)", commands=_DATA)
    test_file: str = _opt("", "test split file (overrides --data)", commands=_DATA)
    split: str = _opt("test", "split to decode/evaluate", ("dev", "test", "train"), ("decode", "eval"))
    low_resource: int = _opt(0, "keep N training instances per class (0 = all)", commands=_TRAINING)
    template: str = _opt("s1", "template style", STYLES, _DATA)
    # training
    ablation: str = _opt("lbls+ctl", "loss variant", ABLATIONS, ("train",))
    epochs: int = _opt(10, "training epochs", commands=_TRAINING)
    batch_size: int = _opt(32, "minibatch size", commands=_TRAINING)
    step_size: float = _opt(1.0, "peak step size of the warmup/decay schedule", commands=_TRAINING)
    mu: float = _opt(0.1, "balance factor of the smoothing term", commands=_TRAINING)
    zeta: float = _opt(1.2, "contrastive margin", commands=_TRAINING)
    beta: float = _opt(0.2, "smoothing mass spread over layer tokens", commands=_TRAINING)
    support: str = _opt("layer", "smoothing support set", SUPPORTS, _TRAINING)
    pool_size: int = _opt(16, "fake relations sampled per instance", commands=_TRAINING)
    pool_mode: str = _opt("total", "pool size counted in total or per gold", POOL_MODES, _TRAINING)
    # decoding
    beam: int = _opt(16, "beam size K", commands=_DECODING)
    alpha: float = _opt(0.6, "length penalty exponent", commands=_DECODING + ("eval",))
    lam: float = _opt(1.0, "borderline for establishing a relation", commands=_DECODING)
    convention: str = _opt("likelihood_consistent", "side of the borderline that is kept",
                           CONVENTIONS, _DECODING)
    checkpoint: str = _opt("", "model checkpoint (default <out>/checkpoint.bin)", commands=("decode", "eval"))
    jobs: int = _opt(1, "worker processes for decoding", commands=("decode", "eval"))
    # evaluation
    mode: str = _opt("both", "evaluation mode", EVAL_MODES, ("eval",))
    exclude_no_relation: str = _opt("auto", "drop no_relation pairs (auto: on for tacred)", SWITCH,
                                    ("train", "eval", "ablate", "sweep-mu"))
    h_at_m: str = _opt("", "comma-separated M values for H@M (empty = skip)", commands=("eval",))
    embeddings: str = _opt("", "relation vector file for H@M (default: lexical similarity)",
                           commands=("eval",))
    grid: str = _opt(",".join(ABLATIONS), "comma-separated ablation variants", commands=("ablate",))
    mu_values: str = _opt(",".join(f"{v:g}" for v in evaluation.DEFAULT_MU_GRID), "comma-separated mu values",
                          commands=("sweep-mu",))
    # synthetic corpus
    n_relations: int = _opt(10, "relations in the synthetic schema", commands=_GEN)
    vocab_size: int = _opt(200, "entity word pool size", commands=_GEN)
    n_train: int = _opt(2000, "synthetic train instances", commands=_GEN)
    n_dev: int = _opt(500, "synthetic dev instances", commands=_GEN)
    n_test: int = _opt(500, "synthetic test instances", commands=_GEN)
    epo_rate: float = _opt(0.3, "fraction of multi-relation instances", commands=_GEN)

    def train_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(
            mu=self.mu, zeta=self.zeta, epochs=self.epochs, batch_size=self.batch_size,
            step_size=self.step_size, seed=self.seed, ablation=self.ablation,
            convention=self.convention, pool_size=self.pool_size, pool_mode=self.pool_mode,
            lbls=LblsConfig(self.beta, self.support),
        )
        return dataclasses.replace(cfg, **overrides)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(self.beam, self.alpha, self.lam, self.convention)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(self.n_relations, self.vocab_size, self.n_train, self.n_dev,
                         self.n_test, self.epo_rate, self.seed)

    def exclude(self) -> bool:
        if self.exclude_no_relation == "auto":
            return self.data_format == "tacred"
        return self.exclude_no_relation == "on"

    def validate(self) -> None:
        """Fail fast on out-of-range settings, before any data is read."""
        self.train_config()
        self.decode_config()
        self.synth_spec()
        if self.low_resource < 0 or self.jobs < 1:
            raise ConfigError("low_resource must be >= 0 and jobs >= 1")

    def to_text(self, command: str) -> str:
        lines = [f"# relinfill {command}"]
        lines += [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    f = FIELDS[name]
    kind = type(f.default)
    try:
        value = kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}") from None
    choices = f.metadata["choices"]
    if choices and value not in choices:
        raise ConfigError(f"{name}: {value!r} not in {list(choices)}")
    return value


def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relinfill", description="Relation extraction by constrained infilling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in COMMANDS:
        p = sub.add_parser(command, help=COMMAND_HELP[command], formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default="", help="key = value settings file")
        for f in fields(RunConfig):
            if command not in f.metadata["commands"]:
                continue
            p.add_argument(
                "--" + f.name.replace("_", "-"),
                dest=f.name,
                type=type(f.default),
                choices=f.metadata["choices"],
                default=argparse.SUPPRESS,
                help=f"{f.metadata['help']} (default: {f.default})",
            )
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    given = {k: v for k, v in vars(args).items() if k in FIELDS}
    from_file = read_config_file(args.config) if args.config else {}
    merged = {**from_file, **given}
    if "seed" not in merged and environ.get(SEED_ENV):
        merged["seed"] = _convert("seed", environ[SEED_ENV])
    return RunConfig(**merged)


# ---------------------------------------------------------------- data


def _schema(cfg: RunConfig) -> RelationSchema | None:
    if cfg.schema in ("tacred", "nyt"):
        return data_io.bundled_schema(cfg.schema)
    if cfg.schema:
        return load_schema(cfg.schema)
    return None


def load_splits(cfg: RunConfig, needed: Sequence[str]) -> tuple[RelationSchema, dict[str, Dataset]]:
    schema = _schema(cfg)
    splits: dict[str, Dataset] = {}
    if cfg.data:
        dir_schema, splits = data_io.load_split_dir(cfg.data)
        schema = schema or dir_schema
    files = {"train": cfg.train_file, "dev": cfg.dev_file, "test": cfg.test_file}
    for split, path in files.items():
        if not path:
            continue
        if cfg.data_format == "tacred":
            splits[split] = data_io.load_tacred_style(path, schema, split)
        elif cfg.data_format == "nyt":
            splits[split] = data_io.load_nyt_style(path, schema, split)
        else:
            if schema is None:
                raise ConfigError("jsonl inputs need --schema or --data")
            splits[split] = data_io.read_jsonl(path, schema, split=split)
        schema = splits[split].schema
    missing = [s for s in needed if s not in splits]
    if missing:
        raise DataError(f"missing data splits {missing}; pass --data or --{missing[0]}-file")
    schema = schema or next(iter(splits.values())).schema
    return schema, {k: (v if v.schema is schema else Dataset(v.name, v.split, v.instances, schema))
                    for k, v in splits.items()}


def _train_split(cfg: RunConfig, ds: Dataset) -> Dataset:
    if cfg.low_resource:
        return data_io.low_resource_sample(ds, cfg.low_resource, cfg.seed)
    return ds


# ---------------------------------------------------------------- commands


def _prepare_out(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"config-{command}.txt").write_text(cfg.to_text(command), encoding="utf-8")
    return out


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    splits = data_io.write_synthetic(cfg.synth_spec(), out)
    for name, ds in splits.items():
        print(f"{name}: {len(ds)} instances -> {out / (name + '.jsonl')}")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    schema, splits = load_splits(cfg, ["train"])
    train_set = _train_split(cfg, splits["train"])
    trie = build_trie(schema)
    decode = cfg.decode_config()
    samples = [render(i, cfg.template, schema) for i in train_set.instances]
    dev = splits.get("dev")

    def dev_eval(model):
        (rep,), _ = evaluation.evaluate(model, dev, decode, cfg.template, exclude_no_relation=cfg.exclude())
        return {"dev_precision": rep.precision, "dev_recall": rep.recall, "dev_f1": rep.f1}

    model, history = train(samples, schema, trie, cfg.train_config(), decode, dev_eval if dev else None)
    save_checkpoint(model, schema, out / "checkpoint.bin")
    evaluation.write_jsonl(history, out / "metrics.jsonl")
    print(f"trained {len(samples)} instances; final loss {history[-1]['loss']:.4f}")


def _load_model(cfg: RunConfig, out: Path):
    path = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.bin"
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _eval_split(cfg: RunConfig, out: Path):
    model, schema = _load_model(cfg, out)
    if not cfg.schema:
        cfg = dataclasses.replace(cfg, schema="")
    _, splits = load_splits(cfg, [cfg.split])
    ds = splits[cfg.split]
    if ds.schema.to_lines() != schema.to_lines():
        raise ConfigError("data schema differs from the checkpoint schema")
    return model, Dataset(ds.name, ds.split, ds.instances, schema)


def cmd_decode(cfg: RunConfig, out: Path) -> None:
    model, ds = _eval_split(cfg, out)
    decode = cfg.decode_config()
    _, cands = evaluation.evaluate(model, ds, decode, cfg.template, (), jobs=cfg.jobs)
    with open(out / "decode.jsonl", "w", encoding="utf-8") as fh:
        for key, cs in cands.items():
            write_records(fh, candidate_records(key, cs))
    print(f"decoded {len(ds)} instances -> {out / 'decode.jsonl'}")


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    model, ds = _eval_split(cfg, out)
    decode = cfg.decode_config()
    modes = ("threshold", "ranking") if cfg.mode == "both" else (cfg.mode,)
    reports, _ = evaluation.evaluate(model, ds, decode, cfg.template, modes, cfg.exclude(), cfg.jobs)
    ms = [int(m) for m in cfg.h_at_m.split(",") if m.strip()]
    h = {}
    if ms:
        provider = (evaluation.EmbeddingSimilarity.from_file(cfg.embeddings)
                    if cfg.embeddings else evaluation.LexicalSimilarity())
        h = evaluation.h_at_m(model, ds, ms, cfg.template, provider, cfg.alpha)
    # output locations do not change results, so they stay out of the hash
    settings = dataclasses.replace(cfg, out="", checkpoint="")
    meta = {"config_hash": evaluation.config_hash(settings), "seed": cfg.seed, "split": cfg.split}
    for rep in reports:
        rep.h_at_m = h
        rep.meta = meta
    evaluation.write_jsonl([r.to_record() for r in reports], out / "report.jsonl")
    text = evaluation.summary_text(reports)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def _grid_values(raw: str, kind, name: str) -> list:
    try:
        return [kind(v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def cmd_ablate(cfg: RunConfig, out: Path) -> None:
    _, splits = load_splits(cfg, ["train", "test"])
    grid = _grid_values(cfg.grid, str, "grid")
    rows = evaluation.run_ablation(
        _train_split(cfg, splits["train"]), splits["test"], grid, cfg.train_config(),
        cfg.decode_config(), cfg.template, cfg.exclude(),
    )
    cols = ["ablation", "lbls", "ctl", "precision", "recall", "f1"]
    evaluation.write_jsonl(rows, out / "ablation.jsonl")
    evaluation.write_csv(rows, out / "ablation.csv", cols)
    text = evaluation.format_table(rows, cols)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_sweep_mu(cfg: RunConfig, out: Path) -> None:
    _, splits = load_splits(cfg, ["train", "test"])
    values = _grid_values(cfg.mu_values, float, "mu_values")
    rows = evaluation.sweep_mu(
        _train_split(cfg, splits["train"]), splits["test"], values, cfg.train_config(),
        cfg.decode_config(), cfg.template, cfg.exclude(),
    )
    cols = ["mu", "f1", "precision", "recall"]
    evaluation.write_jsonl(rows, out / "sweep_mu.jsonl")
    evaluation.write_csv(rows, out / "sweep_mu.csv", cols)
    text = evaluation.format_table(rows, cols)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")


def trie_listing(schema: RelationSchema) -> str:
    trie = build_trie(schema)
    lines = [f"relations: {len(schema)}  depth: {trie.depth}  max branching: {trie.max_branching()}"]
    for d in range(1, trie.depth + 1):
        lines.append(f"layer {d}: {' '.join(sorted(trie.layer_tokens(d)))}")
    return "\n".join(lines) + "\n"


def cmd_inspect_trie(cfg: RunConfig) -> None:
    schema = _schema(cfg)
    if schema is None:
        raise ConfigError("inspect-trie needs --schema")
    print(trie_listing(schema), end="")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-mu": cmd_sweep_mu,
}


def _handler(h: logging.Handler, level: int) -> logging.Handler:
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    h.setLevel(level)
    log.addHandler(h)
    return h


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log.setLevel(logging.INFO)
    log.propagate = False
    handlers = [_handler(logging.StreamHandler(), logging.INFO if args.verbose else logging.WARNING)]
    try:
        cfg = resolve_config(args)
        cfg.validate()
        if args.command == "inspect-trie":
            cmd_inspect_trie(cfg)
            return 0
        out = _prepare_out(cfg, args.command)
        handlers.append(_handler(logging.FileHandler(out / "run.log", mode="w", encoding="utf-8"), logging.INFO))
        HANDLERS[args.command](cfg, out)
        return 0
    except RelinfillError as exc:
        print(f"relinfill: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"relinfill: data error: {exc.filename}: not found", file=sys.stderr)
        return DataError.exit_code
    finally:
        for h in handlers:
            log.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
