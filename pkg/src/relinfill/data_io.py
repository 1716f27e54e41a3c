"""Dataset adapters, the interchange format, a seeded synthetic EPO corpus and low-resource sampling."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .schema import NO_RELATION, RelationSchema, load_schema, save_schema
from .templating import REInstance

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


@dataclass
class Dataset:
    name: str
    split: str
    instances: list[REInstance]
    schema: RelationSchema

    def __post_init__(self):
        seen = set()
        labels = set(self.schema.labels)
        for inst in self.instances:
            if inst.id in seen:
                raise DataError(f"{self.name}/{self.split}: duplicate id {inst.id!r}")
            seen.add(inst.id)
            bad = inst.gold_relations - labels
            if bad:
                raise DataError(f"{inst.id}: labels {sorted(bad)} not in schema")

    def __len__(self):
        return len(self.instances)

    def golds(self) -> dict[str, set[str]]:
        return {i.id: set(i.gold_relations) for i in self.instances}

    def subset(self, instances: Sequence[REInstance], split: str | None = None) -> "Dataset":
        return Dataset(self.name, split or self.split, list(instances), self.schema)


def bundled_schema(name: str) -> RelationSchema:
    """``tacred`` (42 relations) or ``nyt`` (24 relations)."""
    ref = resources.files("relinfill") / "resources" / f"{name}_relations.txt"
    with resources.as_file(ref) as p:
        return load_schema(p)


# ---------------------------------------------------------------- interchange


def write_jsonl(instances: Iterable[REInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_jsonl(path: str | Path, schema: RelationSchema, name: str = "", split: str = "") -> Dataset:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                inst = REInstance.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            instances.append(inst.validate())
    return Dataset(name or Path(path).stem, split or Path(path).stem, instances, schema)


def _records(path: str | Path) -> list[tuple[int, dict]]:
    """Records from a JSON array or JSON-lines file, tagged with a 1-based position."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: malformed JSON ({exc.msg})") from None
        return list(enumerate(data, 1))
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
    return out


# ---------------------------------------------------------------- TACRED / NYT adapters


def load_tacred_style(
    path: str | Path, schema: RelationSchema | None = None, split: str = "train"
) -> Dataset:
    """TACRED-format records: inclusive ``*_start``/``*_end`` indices become half-open spans."""
    schema = schema or bundled_schema("tacred")
    instances = []
    for pos, rec in _records(path):
        try:
            inst = REInstance(
                id=str(rec["id"]),
                tokens=tuple(rec["token"]),
                subj_span=(int(rec["subj_start"]), int(rec["subj_end"]) + 1),
                obj_span=(int(rec["obj_start"]), int(rec["obj_end"]) + 1),
                subj_type=rec.get("subj_type"),
                obj_type=rec.get("obj_type"),
                gold_relations=frozenset([rec["relation"]]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{pos}: malformed record ({exc!r})") from None
        instances.append(inst.validate())
    return Dataset("tacred", split, instances, schema)


def to_tacred_record(inst: REInstance) -> dict:
    (s0, s1), (o0, o1) = inst.subj_span, inst.obj_span
    (rel,) = inst.gold_relations
    return {
        "id": inst.id,
        "token": list(inst.tokens),
        "subj_start": s0,
        "subj_end": s1 - 1,
        "obj_start": o0,
        "obj_end": o1 - 1,
        "subj_type": inst.subj_type,
        "obj_type": inst.obj_type,
        "relation": rel,
    }


def _find_span(tokens: Sequence[str], mention: Sequence[str]) -> tuple[int, int] | None:
    n = len(mention)
    for i in range(len(tokens) - n + 1):
        if tuple(tokens[i : i + n]) == tuple(mention):
            return i, i + n
    return None


def load_nyt_style(
    path: str | Path, schema: RelationSchema | None = None, split: str = "train"
) -> Dataset:
    """NYT-format records (``text`` + ``triple_list``) grouped by entity pair.

    Triples sharing one (subject span, object span) become a single instance,
    so EPO pairs carry several gold relations. Entities are located by their
    first whitespace-token occurrence in the sentence.
    """
    schema = schema or bundled_schema("nyt")
    instances = []
    for pos, rec in _records(path):
        try:
            tokens = tuple(rec["tokens"]) if "tokens" in rec else tuple(rec["text"].split())
            triples = rec["triple_list"]
        except (KeyError, AttributeError, TypeError) as exc:
            raise DataError(f"{path}:{pos}: malformed record ({exc!r})") from None
        rid = str(rec.get("id", pos))
        groups: dict[tuple, set[str]] = {}
        for subj, rel, obj in triples:
            spans = []
            for mention in (subj, obj):
                span = _find_span(tokens, mention.split())
                if span is None:
                    raise DataError(f"{path}:{pos}: entity {mention!r} not found in sentence")
                spans.append(span)
            groups.setdefault(tuple(spans), set()).add(rel)
        for k, ((sspan, ospan), rels) in enumerate(groups.items()):
            inst = REInstance(f"{rid}-{k}", tokens, sspan, ospan, None, None, frozenset(rels))
            instances.append(inst.validate())
    return Dataset("nyt", split, instances, schema)


# ---------------------------------------------------------------- synthetic EPO corpus


@dataclass(frozen=True)
class RelationPattern:
    labels: tuple[str, ...]
    types: tuple[tuple[str, str], ...]
    templates: tuple[str, ...]


# the first ``n_relations`` single patterns define the relation set
SINGLE_PATTERNS = (
    RelationPattern(
        (NO_RELATION,),
        (("PERSON", "ORGANIZATION"), ("PERSON", "CITY"), ("PERSON", "COUNTRY")),
        (
            "{e1} read a long report about {e2} .",
            "{e1} criticized {e2} in a recent interview .",
            "{e1} once gave a speech near {e2} .",
        ),
    ),
    RelationPattern(
        ("per:city_of_birth",),
        (("PERSON", "CITY"),),
        ("{e1} was born in {e2} .", "{e2} is the birthplace of {e1} ."),
    ),
    RelationPattern(
        ("org:founded_by",),
        (("PERSON", "ORGANIZATION"),),
        ("{e1} started {e2} with two friends .", "{e2} was launched by {e1} ."),
    ),
    RelationPattern(
        ("org:member_of",),
        (("PERSON", "ORGANIZATION"),),
        ("{e1} is a member of {e2} .", "{e1} sits on the board of {e2} ."),
    ),
    RelationPattern(
        ("per:city_of_residence",),
        (("PERSON", "CITY"),),
        ("{e1} lives in {e2} .", "{e1} moved to {e2} last year ."),
    ),
    RelationPattern(
        ("per:country_of_birth",),
        (("PERSON", "COUNTRY"),),
        ("{e1} is a native of {e2} .", "{e1} was born abroad in {e2} ."),
    ),
    RelationPattern(
        ("per:country_of_death",),
        (("PERSON", "COUNTRY"),),
        ("{e1} died in exile in {e2} .", "{e1} passed away during a visit to {e2} ."),
    ),
    RelationPattern(
        ("per:employee_of",),
        (("PERSON", "ORGANIZATION"),),
        ("{e1} works for {e2} .", "{e1} joined {e2} as an engineer ."),
    ),
    RelationPattern(
        ("per:city_of_death",),
        (("PERSON", "CITY"),),
        ("{e1} died at a hospital in {e2} .", "{e1} spent the final days of a long life in {e2} ."),
    ),
    RelationPattern(
        ("per:spouse",),
        (("PERSON", "PERSON"),),
        ("{e1} is married to {e2} .", "{e1} wed {e2} last spring ."),
    ),
    RelationPattern(
        ("org:city_of_headquarters",),
        (("ORGANIZATION", "CITY"),),
        ("{e1} is headquartered in {e2} .", "{e1} moved its main office to {e2} ."),
    ),
    RelationPattern(
        ("per:schools_attended",),
        (("PERSON", "ORGANIZATION"),),
        ("{e1} graduated from {e2} .", "{e1} studied law at {e2} ."),
    ),
)

# templates that express two relations over the same entity pair
EPO_PATTERNS = (
    RelationPattern(
        ("org:founded_by", "org:member_of"),
        (("PERSON", "ORGANIZATION"),),
        (
            "{e1} is the co-founder and chief executive of {e2} .",
            "{e1} founded {e2} and still serves on its board .",
        ),
    ),
    RelationPattern(
        ("per:city_of_birth", "per:city_of_residence"),
        (("PERSON", "CITY"),),
        (
            "{e1} was born in {e2} and still lives there .",
            "{e1} , a lifelong resident of {e2} , was born there .",
        ),
    ),
    RelationPattern(
        ("per:country_of_birth", "per:country_of_death"),
        (("PERSON", "COUNTRY"),),
        ("{e1} was born and later died in {e2} .",),
    ),
)

_OPENERS = (
    (),
    ("According", "to", "the", "report", ","),
    ("Last", "week", ","),
    ("Sources", "said", "that"),
    ("In", "an", "unrelated", "story", ","),
)
_CLOSERS = (
    (),
    ("The", "weather", "was", "mild", "."),
    ("Officials", "declined", "to", "comment", "."),
)
_ORG_SUFFIXES = ("Corp", "Group", "Labs", "Institute")
_SYLLABLES = (
    "ka", "lo", "mi", "ra", "ten", "vo", "su", "dar", "bel", "no", "zi", "quo",
    "pa", "re", "tu", "gan", "hel", "ri", "mon", "sa", "fel", "do", "ur", "wi",
)


@dataclass(frozen=True)
class SynthSpec:
    n_relations: int = 10
    vocab_size: int = 200
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    epo_rate: float = 0.3
    seed: int = 7

    def __post_init__(self):
        if not 1 <= self.n_relations <= len(SINGLE_PATTERNS):
            raise ConfigError(f"n_relations must lie in 1..{len(SINGLE_PATTERNS)}")
        if not 0 <= self.epo_rate <= 1:
            raise ConfigError("epo_rate must lie in [0, 1]")
        if self.vocab_size < 40:
            raise ConfigError("vocab_size must be at least 40")


def synthetic_patterns(spec: SynthSpec) -> tuple[list[RelationPattern], list[RelationPattern]]:
    singles = list(SINGLE_PATTERNS[: spec.n_relations])
    labels = {p.labels[0] for p in singles}
    epo = [p for p in EPO_PATTERNS if set(p.labels) <= labels]
    if spec.epo_rate > 0 and not epo:
        raise ConfigError("epo_rate > 0 needs at least two co-expressible relations")
    return singles, epo


def _nonce_words(rng: random.Random, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_SYLLABLES) for _ in range(rng.choice((2, 3)))).capitalize()
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _entity_pools(spec: SynthSpec, rng: random.Random) -> dict[str, dict[str, list[tuple[str, ...]]]]:
    """Per split, per entity type: mention token tuples. Name words never cross splits."""
    per_kind = spec.vocab_size // 5
    taken: set[str] = set()
    words = {k: _nonce_words(rng, per_kind, taken) for k in ("first", "last", "city", "country", "org")}
    pools: dict[str, dict[str, list[tuple[str, ...]]]] = {s: {} for s in SPLITS}
    bounds = (0.6, 0.8)
    for kind, ws in words.items():
        a, b = int(len(ws) * bounds[0]), int(len(ws) * bounds[1])
        for split, part in zip(SPLITS, (ws[:a], ws[a:b], ws[b:])):
            pools[split][kind] = part
    out: dict[str, dict[str, list[tuple[str, ...]]]] = {}
    for split, p in pools.items():
        out[split] = {
            "PERSON": [(f, l) for f in p["first"] for l in p["last"]],
            "CITY": [(c,) for c in p["city"]],
            "COUNTRY": [(c,) for c in p["country"]],
            "ORGANIZATION": [(o, s) for o in p["org"] for s in _ORG_SUFFIXES],
        }
    return out


def _fill(template: str, e1: tuple[str, ...], e2: tuple[str, ...]):
    tokens: list[str] = []
    spans = {}
    for tok in template.split():
        if tok in ("{e1}", "{e2}"):
            ent = e1 if tok == "{e1}" else e2
            spans[tok] = (len(tokens), len(tokens) + len(ent))
            tokens.extend(ent)
        else:
            tokens.append(tok)
    return tokens, spans["{e1}"], spans["{e2}"]


def generate_synthetic(spec: SynthSpec = SynthSpec()) -> tuple[RelationSchema, dict[str, Dataset]]:
    """Seeded train/dev/test splits; entity mentions are disjoint across splits."""
    rng = random.Random(spec.seed)
    singles, epo = synthetic_patterns(spec)
    schema = RelationSchema.from_labels([p.labels[0] for p in singles])
    pools = _entity_pools(spec, rng)
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    out = {}
    for split in SPLITS:
        instances = []
        for i in range(sizes[split]):
            if epo and rng.random() < spec.epo_rate:
                pattern = rng.choice(epo)
            else:
                pattern = rng.choice(singles)
            stype, otype = rng.choice(pattern.types)
            e1 = rng.choice(pools[split][stype])
            e2 = rng.choice(pools[split][otype])
            while e2 == e1:
                e2 = rng.choice(pools[split][otype])
            core, s_span, o_span = _fill(rng.choice(pattern.templates), e1, e2)
            opener, closer = rng.choice(_OPENERS), rng.choice(_CLOSERS)
            shift = len(opener)
            tokens = tuple(opener) + tuple(core) + tuple(closer)
            instances.append(
                REInstance(
                    f"{split}-{i:05d}",
                    tokens,
                    (s_span[0] + shift, s_span[1] + shift),
                    (o_span[0] + shift, o_span[1] + shift),
                    stype,
                    otype,
                    frozenset(pattern.labels),
                ).validate()
            )
        out[split] = Dataset("synthetic", split, instances, schema)
    return schema, out


def label_synthetic(inst: REInstance, spec: SynthSpec) -> frozenset:
    """Re-derive gold labels from the sentence with the generator's templates."""
    singles, epo = synthetic_patterns(spec)
    labels: set[str] = set()
    for pattern in singles + epo:
        for template in pattern.templates:
            core, s_span, o_span = _fill(template, inst.subj, inst.obj)
            offset = inst.subj_span[0] - s_span[0]
            if offset < 0 or inst.obj_span[0] - o_span[0] != offset:
                continue
            if inst.tokens[offset : offset + len(core)] == tuple(core):
                labels.update(pattern.labels)
    return frozenset(labels)


def write_synthetic(spec: SynthSpec, out_dir: str | Path) -> dict[str, Dataset]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema, splits = generate_synthetic(spec)
    save_schema(schema, out_dir / "relations.txt")
    for split, ds in splits.items():
        write_jsonl(ds.instances, out_dir / f"{split}.jsonl")
    return splits


def load_split_dir(data_dir: str | Path, splits: Sequence[str] = SPLITS) -> tuple[RelationSchema, dict[str, Dataset]]:
    """Read ``relations.txt`` plus ``<split>.jsonl`` files from one directory."""
    data_dir = Path(data_dir)
    schema = load_schema(data_dir / "relations.txt")
    out = {}
    for split in splits:
        p = data_dir / f"{split}.jsonl"
        if p.exists():
            out[split] = read_jsonl(p, schema, data_dir.name, split)
    return schema, out


# ---------------------------------------------------------------- low-resource sampling


def class_key(inst: REInstance) -> tuple[str, ...]:
    return tuple(sorted(inst.gold_relations))


def low_resource_sample(dataset: Dataset, n: int, seed: int = 0) -> Dataset:
    """Keep ``min(n, class size)`` instances of every relation class.

    A class is the sorted gold-label tuple, so EPO label combinations form
    their own classes. Kept instances retain their original order.
    """
    if n < 1:
        raise ConfigError(f"N must be >= 1, got {n}")
    classes: dict[tuple[str, ...], list[int]] = {}
    for i, inst in enumerate(dataset.instances):
        classes.setdefault(class_key(inst), []).append(i)
    covered = {l for key in classes for l in key}
    for label in dataset.schema.labels:
        if label not in covered:
            log.warning("relation %s has no instances; skipped", label)
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for key in sorted(classes):
        members = classes[key]
        if len(members) <= n:
            keep.extend(members)
        else:
            keep.extend(members[j] for j in rng.choice(len(members), size=n, replace=False))
    return dataset.subset([dataset.instances[i] for i in sorted(keep)])
