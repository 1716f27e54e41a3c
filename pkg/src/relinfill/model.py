"""Log-linear reference model for P(r_i | M(s), z, r_<i).

Logits for the next relation token are ``sum(theta[f] for f in features)``
where the features are the source/mention/type context conjoined with the
decoding depth, plus the id of the current trie node and the depth itself.
The softmax runs over the full relation-token vocabulary; trie constraints are
applied by the decoder, not here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ConstraintError, NumericError, VocabularyError
from .schema import SENTINELS, RelationSchema, RelationTrie, build_trie, schema_from_lines
from .templating import FormattedSample

CHECKPOINT_MAGIC = b"relinfill-checkpoint 1\n"


def context_features(sample: FormattedSample) -> list[str]:
    feats = {"bias"}
    feats.update(f"w:{t}" for t in sample.source_tokens if t not in SENTINELS)
    feats.update(f"s:{t}" for t in sample.subj_tokens)
    feats.update(f"o:{t}" for t in sample.obj_tokens)
    if sample.subj_type:
        feats.add(f"st:{sample.subj_type}")
    if sample.obj_type:
        feats.add(f"ot:{sample.obj_type}")
    return sorted(feats)


def step_features(sample: FormattedSample, depth: int, node: int) -> list[str]:
    """Feature names active when predicting the token at ``depth`` from trie ``node``."""
    return [f"d{depth}|{c}" for c in context_features(sample)] + [f"node:{node}", f"pos:{depth}"]


@dataclass
class ModelParams:
    weights: np.ndarray  # (n_features, n_tokens), float64
    features: tuple[str, ...]
    tokens: tuple[str, ...]
    feature_index: dict = field(init=False, repr=False, compare=False)
    token_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.features = tuple(self.features)
        self.tokens = tuple(self.tokens)
        if self.weights.shape != (len(self.features), len(self.tokens)):
            raise NumericError(
                f"weight shape {self.weights.shape} does not match vocabularies "
                f"({len(self.features)}, {len(self.tokens)})"
            )
        self.feature_index = {f: i for i, f in enumerate(self.features)}
        self.token_index = {t: i for i, t in enumerate(self.tokens)}

    def replace_weights(self, weights: np.ndarray) -> "ModelParams":
        return ModelParams(weights, self.features, self.tokens)


def build_params(
    trie: RelationTrie,
    samples: Iterable[FormattedSample],
    init_scale: float = 0.0,
    seed: int = 0,
) -> ModelParams:
    """Feature vocabulary from ``samples`` and the trie; weights zero or N(0, init_scale)."""
    feats: set[str] = set()
    for s in samples:
        ctx = context_features(s)
        for d in range(1, trie.depth + 1):
            feats.update(f"d{d}|{c}" for c in ctx)
    feats.update(f"node:{n.index}" for n in trie.inner_nodes())
    feats.update(f"pos:{d}" for d in range(1, trie.depth + 1))
    features = tuple(sorted(feats))
    shape = (len(features), len(trie.vocab))
    if init_scale:
        weights = np.random.default_rng(seed).normal(0.0, init_scale, size=shape)
    else:
        weights = np.zeros(shape)
    return ModelParams(weights, features, trie.vocab)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class Encoded:
    """Integer feature ids for one sample, per decoding depth (index 0 unused)."""

    sample: FormattedSample
    context: list[np.ndarray]


class LogLinearModel:
    def __init__(self, params: ModelParams, trie: RelationTrie):
        missing = [t for t in trie.vocab if t not in params.token_index]
        if missing:
            raise ConfigError(f"model vocabulary lacks trie tokens {missing}")
        self.trie = trie
        self._params = params
        inner = trie.inner_nodes()
        self.inner = [n.index for n in inner]
        self.row_of = {n.index: r for r, n in enumerate(inner)}
        self.row_depth = np.array([n.depth + 1 for n in inner])
        self.row_node_feat = np.array([self._feat_id(f"node:{n.index}") for n in inner])
        self.row_pos_feat = np.array([self._feat_id(f"pos:{n.depth + 1}") for n in inner])
        self._paths: dict[tuple[str, ...], tuple[np.ndarray, np.ndarray]] = {}
        self._encoded: dict[FormattedSample, Encoded] = {}
        self._ctx_cache: tuple | None = None

    def _feat_id(self, name: str) -> int:
        try:
            return self._params.feature_index[name]
        except KeyError:
            raise ConfigError(f"feature {name!r} missing from model vocabulary") from None

    @property
    def params(self) -> ModelParams:
        return self._params

    @params.setter
    def params(self, value: ModelParams):
        if value.features != self._params.features or value.tokens != self._params.tokens:
            raise ConfigError("new parameters must share the model vocabularies")
        self._params = value
        self._ctx_cache = None

    @property
    def vocab(self) -> tuple[str, ...]:
        return self._params.tokens

    @property
    def token_index(self) -> dict:
        return self._params.token_index

    def encode(self, sample: FormattedSample) -> Encoded:
        enc = self._encoded.get(sample)
        if enc is None:
            fi = self._params.feature_index
            ctx = context_features(sample)
            context = [np.zeros(0, dtype=np.intp)]
            for d in range(1, self.trie.depth + 1):
                ids = [fi[k] for k in (f"d{d}|{c}" for c in ctx) if k in fi]
                context.append(np.array(sorted(ids), dtype=np.intp))
            enc = Encoded(sample, context)
            if len(self._encoded) > 50_000:
                self._encoded.clear()
            self._encoded[sample] = enc
        return enc

    def context_logits(self, enc: Encoded) -> np.ndarray:
        """(N + 1, V) summed context weights per depth; row 0 is unused."""
        cached = self._ctx_cache
        if cached is not None and cached[0] is enc.sample:
            return cached[1]
        w = self._params.weights
        out = np.zeros((self.trie.depth + 1, w.shape[1]))
        for d in range(1, self.trie.depth + 1):
            ids = enc.context[d]
            if ids.size:
                out[d] = w[ids].sum(axis=0)
        self._ctx_cache = (enc.sample, out)
        return out

    def rows_logprobs(self, enc: Encoded, rows: np.ndarray) -> np.ndarray:
        w = self._params.weights
        ctx = self.context_logits(enc)
        logits = ctx[self.row_depth[rows]] + w[self.row_node_feat[rows]] + w[self.row_pos_feat[rows]]
        return log_softmax(logits)

    def node_logprobs(self, sample: FormattedSample | Encoded) -> np.ndarray:
        """Next-token log-probs at every inner trie node, rows in ``self.inner`` order."""
        enc = sample if isinstance(sample, Encoded) else self.encode(sample)
        return self.rows_logprobs(enc, np.arange(len(self.inner)))

    def _node_for(self, partial: Sequence[str]):
        for tok in partial:
            if tok not in self._params.token_index:
                raise VocabularyError(f"token {tok!r} not in the relation vocabulary")
        node = self.trie.node_at(partial)
        if not node.children:
            raise ConstraintError(f"path {list(partial)!r} is already complete")
        return node

    def next_token_logprobs(self, sample: FormattedSample, partial: Sequence[str]) -> np.ndarray:
        node = self._node_for(partial)
        row = np.array([self.row_of[node.index]])
        return self.rows_logprobs(self.encode(sample), row)[0]

    def path_index(self, relation: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(inner-node rows, token ids) visited when teacher-forcing ``relation``."""
        relation = tuple(relation)
        hit = self._paths.get(relation)
        if hit is None:
            if not self.trie.is_complete(relation):
                raise ConstraintError(f"{' '.join(relation)!r} is not a complete trie path")
            rows, node = [], self.trie.root
            for tok in relation:
                rows.append(self.row_of[node.index])
                node = self.trie.nodes[node.children[tok]]
            cols = [self._params.token_index[t] for t in relation]
            hit = (np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp))
            self._paths[relation] = hit
        return hit

    def sequence_logprob(self, sample: FormattedSample, relation: Sequence[str]) -> list[float]:
        """Per-token log-probs of a complete relation (teacher forcing)."""
        rows, cols = self.path_index(relation)
        lp = self.rows_logprobs(self.encode(sample), rows)
        return [float(v) for v in lp[np.arange(len(rows)), cols]]

    def backward(self, enc: Encoded, dlogits: np.ndarray, grad: np.ndarray) -> None:
        """Accumulate d(loss)/d(theta) into ``grad`` given d(loss)/d(logits) per inner node."""
        np.add.at(grad, self.row_node_feat, dlogits)
        np.add.at(grad, self.row_pos_feat, dlogits)
        for d in range(1, self.trie.depth + 1):
            ids = enc.context[d]
            if ids.size:
                grad[ids] += dlogits[self.row_depth == d].sum(axis=0)


def learning_rate(step: int, total_steps: int, peak: float) -> float:
    """Linear warmup over the first 10% of steps, then linear decay to zero.

    ``step`` is 1-based; the peak is reached at step ``ceil(0.1 * total_steps)``.
    """
    if total_steps < 1 or not 1 <= step <= total_steps:
        raise ConfigError(f"step {step} outside 1..{total_steps}")
    warm = max(1, math.ceil(0.1 * total_steps))
    if step <= warm:
        return peak * step / warm
    return peak * (total_steps - step) / (total_steps - warm)


def apply_update(params: ModelParams, gradient: np.ndarray, step_size: float) -> ModelParams:
    if gradient.shape != params.weights.shape:
        raise NumericError(f"gradient shape {gradient.shape} != {params.weights.shape}")
    return params.replace_weights(params.weights - step_size * gradient)


def save_checkpoint(model: LogLinearModel, schema: RelationSchema, path: str | Path) -> None:
    p = model.params
    header = {
        "features": list(p.features),
        "tokens": list(p.tokens),
        "shape": list(p.weights.shape),
        "schema": schema.to_lines(),
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        fh.write(p.weights.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[LogLinearModel, RelationSchema]:
    with open(path, "rb") as fh:
        if fh.readline() != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a relinfill checkpoint")
        header = json.loads(fh.readline())
        raw = fh.read()
    schema = schema_from_lines(header["schema"])
    weights = np.frombuffer(raw, dtype="<f8").reshape(header["shape"]).astype(np.float64)
    params = ModelParams(weights, header["features"], header["tokens"])
    return LogLinearModel(params, build_trie(schema)), schema
