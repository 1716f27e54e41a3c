"""Micro-F1 in threshold and ranking modes, the H@M consistency index, and experiment runners."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data_io import Dataset
from .decoding import CandidateRelation, DecodeConfig, mark_established, pgc_decode, score, select
from .errors import ConfigError, ContractError
from .model import LogLinearModel, ModelParams
from .schema import NO_RELATION, RelationSchema, VerbalizedRelation, build_trie, schema_from_lines
from .templating import render
from .training import ABLATIONS, TrainConfig, train


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    mode: str = "threshold"
    per_relation: dict = field(default_factory=dict)
    h_at_m: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["h_at_m"] = {str(k): v for k, v in self.h_at_m.items()}
        return rec


def micro_f1(
    predictions: Mapping[str, Iterable[str]],
    golds: Mapping[str, Iterable[str]],
    exclude_no_relation: bool = False,
    mode: str = "threshold",
    no_relation_label: str = NO_RELATION,
) -> EvalReport:
    """Pair-level (instance, relation) micro precision/recall/F1."""
    if set(predictions) != set(golds):
        missing = sorted(set(predictions) ^ set(golds))[:5]
        raise ContractError(f"prediction and gold ids differ, e.g. {missing}")
    per: dict[str, Counter] = {}
    tp = fp = fn = 0
    for key in sorted(golds):
        pred, gold = set(predictions[key]), set(golds[key])
        if exclude_no_relation:
            pred.discard(no_relation_label)
            gold.discard(no_relation_label)
        for label, kind in (
            *((l, "tp") for l in pred & gold),
            *((l, "fp") for l in pred - gold),
            *((l, "fn") for l in gold - pred),
        ):
            per.setdefault(label, Counter())[kind] += 1
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    per_relation = {
        l: {k: c[k] for k in ("tp", "fp", "fn")} for l, c in sorted(per.items())
    }
    return EvalReport(p, r, f1, tp, fp, fn, mode, per_relation)


# ---------------------------------------------------------------- decoding a dataset


def _decode_chunk(args):
    weights, features, tokens, schema_lines, records, style, decode = args
    from .templating import REInstance

    schema = schema_from_lines(schema_lines)
    trie = build_trie(schema)
    model = LogLinearModel(ModelParams(weights, features, tokens), trie)
    out = []
    for rec in records:
        inst = REInstance.from_record(rec)
        out.append(pgc_decode(model, render(inst, style, schema), trie, decode))
    return out



def decode_dataset(
    model: LogLinearModel,
    dataset: Dataset,
    decode: DecodeConfig,
    style: str = "s1",
    jobs: int = 1,
) -> dict[str, list[CandidateRelation]]:
    """PGC candidates for every instance, keyed by id in dataset order."""
    insts = dataset.instances
    if jobs <= 1 or len(insts) < 2 * jobs:
        results = [
            pgc_decode(model, render(i, style, dataset.schema), model.trie, decode) for i in insts
        ]
    else:
        p = model.params
        lines = dataset.schema.to_lines()
        size = math.ceil(len(insts) / jobs)
        chunks = [
            (p.weights, p.features, p.tokens, lines, [i.to_record() for i in insts[k : k + size]], style, decode)
            for k in range(0, len(insts), size)
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [c for part in pool.map(_decode_chunk, chunks) for c in part]
    return {i.id: c for i, c in zip(insts, results)}


def threshold_predictions(
    candidates: Mapping[str, Sequence[CandidateRelation]], decode: DecodeConfig
) -> dict[str, set[str]]:
    return {k: {c.label for c in select(cands, decode)} for k, cands in candidates.items()}


def ranking_mode(
    candidates: Mapping[str, Sequence[CandidateRelation]],
    golds: Mapping[str, Iterable[str]],
) -> tuple[dict[str, set[str]], list[str]]:
    """Oracle-n ranking: keep the ``n = |gold|`` lowest-``f`` candidates per instance.

    Returns the predictions and the ids that had fewer than ``n`` candidates.
    """
    preds, flagged = {}, []
    for key, cands in candidates.items():
        n = len(set(golds[key]))
        ranked = sorted(cands, key=lambda c: (c.f, c.tokens))
        if len(ranked) < n:
            flagged.append(key)
        preds[key] = {c.label for c in ranked[:n]}
    return preds, flagged


def evaluate(
    model: LogLinearModel,
    dataset: Dataset,
    decode: DecodeConfig,
    style: str = "s1",
    modes: Sequence[str] = ("threshold",),
    exclude_no_relation: bool = False,
    jobs: int = 1,
    candidates: Mapping[str, Sequence[CandidateRelation]] | None = None,
) -> tuple[list[EvalReport], dict[str, list[CandidateRelation]]]:
    """Decode (unless ``candidates`` is given) and score in each requested mode.

    The returned candidates carry ``established`` flags from threshold selection.
    """
    if candidates is None:
        candidates = decode_dataset(model, dataset, decode, style, jobs)
    golds = dataset.golds()
    reports = []
    for mode in modes:
        if mode == "threshold":
            preds = threshold_predictions(candidates, decode)
            rep = micro_f1(preds, golds, exclude_no_relation, mode)
        elif mode == "ranking":
            preds, flagged = ranking_mode(candidates, golds)
            rep = micro_f1(preds, golds, exclude_no_relation, mode)
            rep.flagged = flagged
        else:
            raise ConfigError(f"unknown evaluation mode {mode!r}")
        reports.append(rep)
    marked = {k: mark_established(c, select(c, decode)) for k, c in candidates.items()}
    return reports, marked


# ---------------------------------------------------------------- H@M


def _trigrams(tokens: Sequence[str]) -> Counter:
    text = f" {' '.join(tokens)} "
    return Counter(text[i : i + 3] for i in range(len(text) - 2))


class LexicalSimilarity:
    """Token Jaccard over verbalizations; character-trigram cosine breaks ties."""

    kind = "lexical"

    def key(self, a: VerbalizedRelation, b: VerbalizedRelation) -> tuple[float, ...]:
        ta, tb = set(a.tokens[:-1]), set(b.tokens[:-1])
        jac = len(ta & tb) / len(ta | tb) if ta | tb else 1.0
        ca, cb = _trigrams(a.tokens[:-1]), _trigrams(b.tokens[:-1])
        dot = sum(v * cb[k] for k, v in ca.items())
        norm = math.sqrt(sum(v * v for v in ca.values()) * sum(v * v for v in cb.values()))
        return (jac, dot / norm if norm else 0.0)


class EmbeddingSimilarity:
    """Cosine similarity of precomputed relation vectors (``label<TAB>v1 v2 ...`` per line)."""

    kind = "embedding_file"

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        self.vectors = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingSimilarity":
        vecs = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip() and not line.startswith("#"):
                label, _, rest = line.partition("\t")
                vecs[label.strip()] = np.array([float(x) for x in rest.split()])
        return cls(vecs)

    def _vec(self, label: str) -> np.ndarray:
        try:
            return self.vectors[label]
        except KeyError:
            raise ConfigError(f"no embedding for relation {label!r}") from None

    def key(self, a: VerbalizedRelation, b: VerbalizedRelation) -> tuple[float, ...]:
        va, vb = self._vec(a.label), self._vec(b.label)
        return (float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb))),)


def iou(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 1.0


def likelihood_top_m(model, sample, schema: RelationSchema, m: int, alpha: float) -> list[str]:
    scored = [
        (score(r.tokens, model.sequence_logprob(sample, r.tokens), alpha), r.tokens, r.label)
        for r in schema.relations
    ]
    return [label for _, _, label in sorted(scored)[:m]]


def similarity_top_m(gold: str, schema: RelationSchema, m: int, provider) -> list[str]:
    g = next(r for r in schema.relations if r.label == gold)
    ranked = sorted(
        schema.relations, key=lambda r: (tuple(-v for v in provider.key(g, r)), r.tokens)
    )
    return [r.label for r in ranked[:m]]


def h_index(model, sample, gold: str, schema: RelationSchema, m: int, provider=None, alpha: float = 0.6) -> float:
    """IoU of the top-``m`` relations by model likelihood and by similarity to ``gold``."""
    if not 1 <= m <= len(schema):
        raise ContractError(f"M must lie in 1..{len(schema)}, got {m}")
    if gold not in schema:
        raise ContractError(f"gold relation {gold!r} not in schema")
    provider = provider or LexicalSimilarity()
    c1 = likelihood_top_m(model, sample, schema, m, alpha)
    c2 = similarity_top_m(gold, schema, m, provider)
    return iou(c1, c2)


def h_at_m(
    model,
    dataset: Dataset,
    ms: Sequence[int],
    style: str = "s1",
    provider=None,
    alpha: float = 0.6,
) -> dict[int, float]:
    """Mean H@M over every (instance, gold relation) pair of ``dataset``."""
    provider = provider or LexicalSimilarity()
    sums = {m: 0.0 for m in ms}
    count = 0
    for inst in dataset.instances:
        sample = render(inst, style, dataset.schema)
        c1_full = likelihood_top_m(model, sample, dataset.schema, max(ms), alpha)
        for gold in sorted(inst.gold_relations):
            count += 1
            for m in ms:
                c2 = similarity_top_m(gold, dataset.schema, m, provider)
                sums[m] += iou(c1_full[:m], c2)
    return {m: (s / count if count else 0.0) for m, s in sums.items()}


# ---------------------------------------------------------------- experiment runners


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_and_evaluate(
    train_set: Dataset,
    eval_set: Dataset,
    config: TrainConfig,
    decode: DecodeConfig,
    style: str = "s1",
    exclude_no_relation: bool = False,
) -> tuple[EvalReport, LogLinearModel, list[dict]]:
    trie = build_trie(train_set.schema)
    samples = [render(i, style, train_set.schema) for i in train_set.instances]
    model, history = train(samples, train_set.schema, trie, config, decode)
    (report,), _ = evaluate(model, eval_set, decode, style, ("threshold",), exclude_no_relation)
    report.meta = {"config_hash": config_hash(config, decode), "seed": config.seed}
    return report, model, history


def run_ablation(
    train_set: Dataset,
    eval_set: Dataset,
    grid: Sequence[str] = ABLATIONS,
    config: TrainConfig = TrainConfig(),
    decode: DecodeConfig = DecodeConfig(),
    style: str = "s1",
    exclude_no_relation: bool = False,
) -> list[dict]:
    """One row per ablation variant, all trained from the same seed."""
    bad = [g for g in grid if g not in ABLATIONS]
    if bad:
        raise ConfigError(f"unknown ablation variants {bad}")
    rows = []
    for variant in grid:
        cfg = replace(config, ablation=variant)
        report, _, _ = train_and_evaluate(train_set, eval_set, cfg, decode, style, exclude_no_relation)
        rows.append(
            {
                "ablation": variant,
                "lbls": "lbls" in variant,
                "ctl": "ctl" in variant,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
                "config_hash": report.meta["config_hash"],
            }
        )
    return rows


DEFAULT_MU_GRID = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)


def sweep_mu(
    train_set: Dataset,
    eval_set: Dataset,
    values: Sequence[float] = DEFAULT_MU_GRID,
    config: TrainConfig = TrainConfig(),
    decode: DecodeConfig = DecodeConfig(),
    style: str = "s1",
    exclude_no_relation: bool = False,
) -> list[dict]:
    """Train the full objective once per balance factor; records sorted by ``mu``."""
    if not values:
        raise ConfigError("mu sweep needs at least one value")
    rows = []
    for mu in sorted(values):
        cfg = replace(config, mu=mu, ablation="lbls+ctl")
        report, _, _ = train_and_evaluate(train_set, eval_set, cfg, decode, style, exclude_no_relation)
        rows.append({"mu": mu, "f1": report.f1, "precision": report.precision, "recall": report.recall})
    return rows


# ---------------------------------------------------------------- emission


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def write_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    def cell(v):
        if isinstance(v, bool):
            return "yes" if v else "no"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    lines += [" | ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"


def summary_text(reports: Sequence[EvalReport]) -> str:
    rows = [
        {"mode": r.mode, "precision": r.precision, "recall": r.recall, "f1": r.f1, "tp": r.tp, "fp": r.fp, "fn": r.fn}
        for r in reports
    ]
    text = format_table(rows, ["mode", "precision", "recall", "f1", "tp", "fp", "fn"])
    for r in reports[:1]:
        for m, v in sorted(r.h_at_m.items()):
            text += f"H@{m}: {v:.4f}\n"
    return text
