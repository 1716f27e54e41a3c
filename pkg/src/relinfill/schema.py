"""Relation label set, the label -> phrase verbalizer and the relation trie."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import BoundsError, ConstraintError, SchemaError

END = "<E>"
MASK_X = "<X>"
MASK_Y = "<Y>"
MASK_Z = "<Z>"
SENTINELS = frozenset({END, MASK_X, MASK_Y, MASK_Z})

NO_RELATION = "no_relation"

_PREFIXES = {"per": "person", "org": "organization"}
_COMPOUNDS = {
    "stateorprovince": ("state", "or", "province"),
    "stateorprovinces": ("state", "or", "provinces"),
}


@dataclass(frozen=True)
class VerbalizedRelation:
    label: str
    tokens: tuple[str, ...]  # always ends with END

    @property
    def phrase(self) -> str:
        return " ".join(self.tokens[:-1])


def _words(chunk: str) -> list[str]:
    out: list[str] = []
    for w in chunk.split("_"):
        if not w:
            continue
        out.extend(_COMPOUNDS.get(w, (w,)))
    return out


def verbalize(label: str, overrides: Mapping[str, str] | None = None) -> VerbalizedRelation:
    """Map a dataset label to a word sequence terminated by ``END``.

    ``per:``/``org:`` prefixes expand to ``person``/``organization``; ``_`` splits
    words and ``/`` reads as ``or``. Labels starting with ``/`` are treated as
    Freebase-style paths (NYT) whose segments are plain word breaks.
    """
    if not label or not label.strip():
        raise SchemaError("empty relation label")
    if overrides and label in overrides:
        words = overrides[label].split()
    elif label.startswith("/"):
        words = [w for seg in label.strip("/").split("/") for w in _words(seg)]
    else:
        head, sep, rest = label.partition(":")
        if sep and head in _PREFIXES:
            words, body = [_PREFIXES[head]], rest
        else:
            words, body = [], label
        for k, part in enumerate(body.split("/")):
            if k:
                words.append("or")
            words.extend(_words(part))
    if not words:
        raise SchemaError(f"label {label!r} verbalizes to nothing")
    bad = SENTINELS.intersection(words)
    words = [w.lower() for w in words]
    if bad:
        raise SchemaError(f"label {label!r} verbalization contains sentinel {sorted(bad)}")
    return VerbalizedRelation(label, tuple(words) + (END,))


@dataclass(frozen=True)
class RelationSchema:
    relations: tuple[VerbalizedRelation, ...]
    overrides: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for rel in self.relations:
            if rel.label in seen:
                raise SchemaError(f"duplicate relation label {rel.label!r}")
            seen.add(rel.label)
        object.__setattr__(self, "overrides", MappingProxyType(dict(self.overrides)))

    @classmethod
    def from_labels(cls, labels: Iterable[str], overrides: Mapping[str, str] | None = None):
        overrides = dict(overrides or {})
        return cls(tuple(verbalize(l, overrides) for l in labels), overrides)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.relations]

    @property
    def includes_no_relation(self) -> bool:
        return any(r.label == NO_RELATION for r in self.relations)

    def __len__(self):
        return len(self.relations)

    def __contains__(self, label):
        return label in self._by_label

    @cached_property
    def _by_label(self) -> dict[str, VerbalizedRelation]:
        return {r.label: r for r in self.relations}

    def tokens_of(self, label: str) -> tuple[str, ...]:
        try:
            return self._by_label[label].tokens
        except KeyError:
            raise SchemaError(f"unknown relation label {label!r}") from None

    def label_of(self, tokens: Sequence[str]) -> str:
        tokens = tuple(tokens)
        for r in self.relations:
            if r.tokens == tokens:
                return r.label
        raise SchemaError(f"no relation spells {' '.join(tokens)!r}")

    def to_lines(self) -> list[str]:
        return [
            f"{l}\t{self.overrides[l]}" if l in self.overrides else l for l in self.labels
        ]


def load_schema(path: str | Path) -> RelationSchema:
    """Read ``label<TAB>optional override`` lines; ``#`` lines are comments."""
    return schema_from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def schema_from_lines(lines: Iterable[str]) -> RelationSchema:
    labels, overrides = [], {}
    for raw in lines:
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        label, _, phrase = raw.partition("\t")
        label = label.strip()
        labels.append(label)
        if phrase.strip():
            overrides[label] = phrase.strip()
    return RelationSchema.from_labels(labels, overrides)


def save_schema(schema: RelationSchema, path: str | Path) -> None:
    Path(path).write_text("\n".join(schema.to_lines()) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TrieNode:
    index: int
    token: str | None  # None for the root
    depth: int
    parent: int | None
    children: Mapping[str, int]
    label: str | None = None  # set on END nodes


@dataclass(frozen=True)
class RelationTrie:
    nodes: tuple[TrieNode, ...]
    depth: int
    layer_index: Mapping[int, frozenset]
    vocab: tuple[str, ...]

    @property
    def root(self) -> TrieNode:
        return self.nodes[0]

    def node_at(self, path: Sequence[str]) -> TrieNode:
        node = self.nodes[0]
        for tok in path:
            nxt = node.children.get(tok)
            if nxt is None:
                raise ConstraintError(f"path {list(path)!r} is not in the relation trie")
            node = self.nodes[nxt]
        return node

    def allowed_next(self, path: Sequence[str]) -> frozenset:
        return frozenset(self.node_at(path).children)

    def layer_tokens(self, depth: int) -> frozenset:
        if not 1 <= depth <= self.depth:
            raise BoundsError(f"depth {depth} outside 1..{self.depth}")
        return self.layer_index[depth]

    def siblings(self, path: Sequence[str]) -> frozenset:
        """Tokens that could replace the last element of ``path``."""
        if not path:
            raise BoundsError("empty path has no siblings")
        return self.allowed_next(path[:-1])

    def is_complete(self, path: Sequence[str]) -> bool:
        return self.node_at(path).label is not None

    def label_of(self, path: Sequence[str]) -> str:
        node = self.node_at(path)
        if node.label is None:
            raise ConstraintError(f"path {list(path)!r} is not a complete relation")
        return node.label

    def paths(self) -> Iterator[tuple[str, ...]]:
        """All complete root-to-END paths, in lexicographic token order."""
        stack: list[tuple[int, tuple[str, ...]]] = [(0, ())]
        while stack:
            idx, prefix = stack.pop()
            node = self.nodes[idx]
            if node.label is not None:
                yield prefix
                continue
            for tok in sorted(node.children, reverse=True):
                stack.append((node.children[tok], prefix + (tok,)))

    def inner_nodes(self) -> list[TrieNode]:
        return [n for n in self.nodes if n.children]

    def max_branching(self) -> int:
        return max(len(n.children) for n in self.nodes)


def build_trie(schema: RelationSchema) -> RelationTrie:
    seen: dict[tuple[str, ...], str] = {}
    for rel in schema.relations:
        if rel.tokens in seen:
            raise SchemaError(
                f"relations {seen[rel.tokens]!r} and {rel.label!r} share verbalization "
                f"{rel.phrase!r}"
            )
        seen[rel.tokens] = rel.label
    if not seen:
        raise SchemaError("cannot build a trie from an empty schema")

    tree: dict = {}
    for tokens, label in seen.items():
        cur = tree
        for tok in tokens:
            cur = cur.setdefault(tok, {})
        cur[None] = label

    # breadth-first numbering with sorted children keeps node ids reproducible
    nodes: list[TrieNode] = []
    queue = deque([(tree, None, 0, None)])
    while queue:
        sub, token, depth, parent = queue.popleft()
        idx = len(nodes)
        nodes.append(TrieNode(idx, token, depth, parent, {}, sub.get(None)))
        for tok in sorted(k for k in sub if k is not None):
            queue.append((sub[tok], tok, depth + 1, idx))
    children: dict[int, dict[str, int]] = {n.index: {} for n in nodes}
    for n in nodes[1:]:
        children[n.parent][n.token] = n.index
    nodes = [
        TrieNode(n.index, n.token, n.depth, n.parent, MappingProxyType(children[n.index]), n.label)
        for n in nodes
    ]

    depth = max(n.depth for n in nodes)
    layers: dict[int, set] = {d: set() for d in range(1, depth + 1)}
    for n in nodes[1:]:
        layers[n.depth].add(n.token)
    layer_index = MappingProxyType({d: frozenset(t) for d, t in layers.items()})
    vocab = tuple(sorted({n.token for n in nodes[1:]}))
    return RelationTrie(tuple(nodes), depth, layer_index, vocab)


def allowed_next(trie: RelationTrie, path: Sequence[str]) -> frozenset:
    return trie.allowed_next(path)


def layer_tokens(trie: RelationTrie, depth: int) -> frozenset:
    return trie.layer_tokens(depth)
