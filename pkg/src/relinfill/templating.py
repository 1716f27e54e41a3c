"""Render RE instances as corrupted source text plus an infilling target.

Both template styles share the same source suffix; they differ in the target
prefix, where style ``s2`` also recovers the entity types::

    source: <sentence> The relation between <X> and <Y> is <Z> .
    s1 z:   <X> subj <Y> obj <Z>
    s2 z:   <X> subj_type : subj <Y> obj_type : obj <Z>

The relation words (ending in ``<E>``) follow ``<Z>`` in the target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ContractError, DataError, TemplateError
from .schema import MASK_X, MASK_Y, MASK_Z, RelationSchema

STYLES = ("s1", "s2")
SOURCE_SUFFIX = ("The", "relation", "between", MASK_X, "and", MASK_Y, "is", MASK_Z, ".")
TYPE_SEP = ":"


@dataclass(frozen=True)
class REInstance:
    id: str
    tokens: tuple[str, ...]
    subj_span: tuple[int, int]  # half-open
    obj_span: tuple[int, int]
    subj_type: str | None
    obj_type: str | None
    gold_relations: frozenset

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "subj_span", tuple(self.subj_span))
        object.__setattr__(self, "obj_span", tuple(self.obj_span))
        object.__setattr__(self, "gold_relations", frozenset(self.gold_relations))

    def validate(self) -> "REInstance":
        n = len(self.tokens)
        for name, (a, b) in (("subject", self.subj_span), ("object", self.obj_span)):
            if not 0 <= a < b <= n:
                raise DataError(f"{self.id}: {name} span {(a, b)} out of bounds for {n} tokens")
        (a1, b1), (a2, b2) = self.subj_span, self.obj_span
        if a1 < b2 and a2 < b1:
            raise DataError(f"{self.id}: subject and object spans overlap")
        if not self.gold_relations:
            raise DataError(f"{self.id}: no gold relation")
        return self

    @property
    def subj(self) -> tuple[str, ...]:
        return self.tokens[slice(*self.subj_span)]

    @property
    def obj(self) -> tuple[str, ...]:
        return self.tokens[slice(*self.obj_span)]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "subj_span": list(self.subj_span),
            "obj_span": list(self.obj_span),
            "subj_type": self.subj_type,
            "obj_type": self.obj_type,
            "relations": sorted(self.gold_relations),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "REInstance":
        return cls(
            str(rec["id"]),
            tuple(rec["tokens"]),
            tuple(rec["subj_span"]),
            tuple(rec["obj_span"]),
            rec.get("subj_type"),
            rec.get("obj_type"),
            frozenset(rec["relations"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False, sort_keys=True)


@dataclass(frozen=True)
class FormattedSample:
    id: str
    source_tokens: tuple[str, ...]
    prefix_tokens: tuple[str, ...]
    gold_relation_tokens: tuple[tuple[str, ...], ...]
    template_style: str
    # entity fields mirror what the prefix exposes; types are only set for s2
    subj_tokens: tuple[str, ...] = ()
    obj_tokens: tuple[str, ...] = ()
    subj_type: str | None = None
    obj_type: str | None = None

    @property
    def target_tokens(self) -> tuple[str, ...]:
        """The full target for the first gold relation."""
        return split_target(self.prefix_tokens, self.gold_relation_tokens[0])


def render(
    instance: REInstance,
    style: str,
    schema: RelationSchema | None = None,
    type_names: Mapping[str, str] | None = None,
) -> FormattedSample:
    """Build the corrupted source and prefix ``z`` for one instance.

    ``type_names`` optionally rewrites entity types (e.g. ``PER`` -> ``person``)
    before they are placed in an ``s2`` prefix; by default types pass through.
    Gold verbalizations come from ``schema`` and are omitted if it is None.
    """
    if style not in STYLES:
        raise TemplateError(f"unknown template style {style!r}")
    n = len(instance.tokens)
    for a, b in (instance.subj_span, instance.obj_span):
        if not 0 <= a < b <= n:
            raise DataError(f"{instance.id}: span {(a, b)} out of bounds for {n} tokens")
    subj, obj = instance.subj, instance.obj
    if style == "s1":
        prefix = (MASK_X, *subj, MASK_Y, *obj, MASK_Z)
    else:
        if not instance.subj_type or not instance.obj_type:
            raise TemplateError(f"{instance.id}: style s2 needs both entity types")
        names = type_names or {}
        st = tuple(names.get(instance.subj_type, instance.subj_type).split())
        ot = tuple(names.get(instance.obj_type, instance.obj_type).split())
        prefix = (MASK_X, *st, TYPE_SEP, *subj, MASK_Y, *ot, TYPE_SEP, *obj, MASK_Z)
    golds: tuple[tuple[str, ...], ...] = ()
    if schema is not None:
        golds = tuple(sorted(schema.tokens_of(l) for l in instance.gold_relations))
    return FormattedSample(
        id=instance.id,
        source_tokens=tuple(instance.tokens) + SOURCE_SUFFIX,
        prefix_tokens=prefix,
        gold_relation_tokens=golds,
        template_style=style,
        subj_tokens=subj,
        obj_tokens=obj,
        subj_type=instance.subj_type if style == "s2" else None,
        obj_type=instance.obj_type if style == "s2" else None,
    )


def split_target(prefix: Sequence[str], relation: Sequence[str]) -> tuple[str, ...]:
    """Join the prefix ``z`` and the relation part ``r`` into a full target."""
    if not prefix or prefix[-1] != MASK_Z:
        raise ContractError("prefix must end with the <Z> sentinel")
    return tuple(prefix) + tuple(relation)


def unfold_target(target: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Inverse of :func:`split_target`: cut after the last ``<Z>``."""
    target = tuple(target)
    if MASK_Z not in target:
        raise ContractError("target has no <Z> sentinel")
    cut = len(target) - target[::-1].index(MASK_Z)
    return target[:cut], target[cut:]
