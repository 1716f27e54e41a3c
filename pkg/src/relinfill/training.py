"""Learning objectives (CE, layer-based label smoothing, contrastive hinge) and the training loop.

Every objective here is a weighted sum of negative log-probabilities of
relation tokens at trie nodes, ``L = -sum_i <c_i, log p_i>``. Each loss builds
its weight matrix ``c`` over (inner trie node, token); the softmax gradient is
then ``rowsum(c) * p - c`` for every objective.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decoding import DecodeConfig, score
from .errors import BoundsError, ConfigError, DataError, NumericError
from .model import LogLinearModel, apply_update, build_params, learning_rate
from .schema import RelationSchema, RelationTrie
from .templating import FormattedSample

log = logging.getLogger(__name__)

ABLATIONS = ("ce", "lbls", "ctl", "lbls+ctl")
LOSS_KINDS = ("ce", "lbls", "ctl", "ctl+ce", "combined")
ABLATION_LOSS = {"ce": "ce", "lbls": "lbls", "ctl": "ctl+ce", "lbls+ctl": "combined"}
SUPPORTS = ("layer", "siblings")
POOL_MODES = ("total", "each")


@dataclass(frozen=True)
class LblsConfig:
    beta: float = 0.2
    support: str = "layer"

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.support not in SUPPORTS:
            raise ConfigError(f"unknown smoothing support {self.support!r}")


@dataclass(frozen=True)
class TrainConfig:
    mu: float = 0.1
    zeta: float = 1.2
    epochs: int = 10
    batch_size: int = 32
    step_size: float = 1.0
    seed: int = 0
    ablation: str = "lbls+ctl"
    convention: str = "likelihood_consistent"
    pool_size: int = 16
    pool_mode: str = "total"
    lbls: LblsConfig = field(default_factory=LblsConfig)

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"mu must be > 0, got {self.mu}")
        if self.zeta <= 0:
            raise ConfigError(f"zeta must be > 0, got {self.zeta}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.pool_mode not in POOL_MODES:
            raise ConfigError(f"unknown pool mode {self.pool_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")

    @property
    def loss_kind(self) -> str:
        return ABLATION_LOSS[self.ablation]


# ---------------------------------------------------------------- target distributions


def support_set(trie: RelationTrie, gold: Sequence[str], position: int, support: str) -> frozenset:
    if support == "layer":
        return trie.layer_tokens(position)
    return trie.siblings(tuple(gold[:position]))


def lbls_distribution(
    trie: RelationTrie,
    gold: Sequence[str],
    position: int,
    beta: float,
    support: str = "layer",
    vocab: Sequence[str] | None = None,
) -> np.ndarray:
    """Soft target over ``vocab`` (default: the trie vocabulary) at 1-based ``position``.

    The gold token keeps ``1 - beta``; the rest of the support set shares ``beta``
    equally; everything else is zero. A singleton support puts all mass on gold.
    """
    if not 1 <= position <= len(gold):
        raise BoundsError(f"position {position} outside 1..{len(gold)}")
    vocab = trie.vocab if vocab is None else vocab
    index = {t: i for i, t in enumerate(vocab)}
    target = gold[position - 1]
    others = sorted(support_set(trie, gold, position, support) - {target})
    out = np.zeros(len(vocab))
    if others:
        out[index[target]] = 1.0 - beta
        out[[index[t] for t in others]] = beta / len(others)
    else:
        out[index[target]] = 1.0
    return out


def _check_finite(steps: np.ndarray) -> None:
    if not np.all(np.isfinite(steps)):
        raise NumericError("non-finite log-probability in model output")


def ce_loss(steps: np.ndarray, gold: Sequence[str], vocab: Sequence[str]) -> float:
    """``-sum_i log p_i(gold_i)`` for per-position log-prob rows ``steps``."""
    index = {t: i for i, t in enumerate(vocab)}
    steps = np.asarray(steps)
    _check_finite(steps)
    return float(-sum(steps[i, index[t]] for i, t in enumerate(gold)))


def lbls_loss(
    steps: np.ndarray,
    gold: Sequence[str],
    trie: RelationTrie,
    beta: float,
    support: str = "layer",
    vocab: Sequence[str] | None = None,
) -> float:
    """Soft-label cross-entropy against :func:`lbls_distribution` at every position."""
    vocab = trie.vocab if vocab is None else vocab
    steps = np.asarray(steps)
    total = 0.0
    for i in range(len(gold)):
        target = lbls_distribution(trie, gold, i + 1, beta, support, vocab)
        mask = target > 0
        if not np.all(np.isfinite(steps[i, mask])):
            raise NumericError("supported token has zero probability")
        total -= float(target[mask] @ steps[i, mask])
    return total


def contrastive_loss(
    positive_f: Sequence[float],
    negative_f: Sequence[float],
    lam: float = 1.0,
    zeta: float = 1.2,
    convention: str = "likelihood_consistent",
) -> float:
    """Hinge separating gold and fake relation scores.

    ``likelihood_consistent``: golds are pushed below ``lam`` and fakes above
    ``zeta``. ``keep_high_f``: golds above ``zeta`` and fakes below it.
    """
    if zeta <= 0:
        raise ConfigError(f"zeta must be > 0, got {zeta}")
    if convention == "likelihood_consistent":
        return sum(max(f - lam, 0.0) for f in positive_f) + sum(
            max(zeta - f, 0.0) for f in negative_f
        )
    return sum(max(zeta - f, 0.0) for f in positive_f) + sum(
        max(f - zeta, 0.0) for f in negative_f
    )


def combined_loss(lbls: float, ctl: float, mu: float) -> float:
    if mu <= 0:
        raise ConfigError(f"mu must be > 0, got {mu}")
    return ctl + mu * lbls


def sample_negatives(
    schema: RelationSchema,
    golds: Sequence[str],
    pool_size: int = 16,
    seed: int | np.random.Generator | Sequence[int] = 0,
    pool_mode: str = "total",
) -> list[str]:
    """Fake relation labels drawn uniformly without replacement from non-gold labels.

    With ``pool_mode='total'`` the pool (golds + fakes) holds ``pool_size``
    relations; with ``'each'`` up to ``pool_size`` fakes are drawn.
    """
    golds = set(golds)
    unknown = golds - set(schema.labels)
    if unknown:
        raise DataError(f"gold labels {sorted(unknown)} not in schema")
    if len(schema) < len(golds):
        raise DataError("schema is smaller than the gold set")
    if pool_mode == "total" and pool_size < len(golds):
        raise ConfigError(f"pool size {pool_size} smaller than {len(golds)} golds")
    rest = [l for l in schema.labels if l not in golds]
    want = pool_size - len(golds) if pool_mode == "total" else pool_size
    n = min(want, len(rest))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(len(rest), size=n, replace=False) if n else []
    return [rest[i] for i in picks]


# ---------------------------------------------------------------- batched objective


@dataclass
class TrainItem:
    sample: FormattedSample
    golds: list[tuple[str, ...]]
    negatives: list[tuple[str, ...]] = field(default_factory=list)


@dataclass
class LossParts:
    ce: float = 0.0
    lbls: float = 0.0
    ctl: float = 0.0
    total: float = 0.0
    kink_gap: float = math.inf  # distance of the nearest hinge argument from its kink


def _add_ce(model, c, golds, weight):
    for g in golds:
        rows, cols = model.path_index(g)
        np.add.at(c, (rows, cols), weight / len(golds))


def _add_lbls(model, c, golds, beta, support, weight):
    trie = model.trie
    index = model.token_index
    for g in golds:
        rows, _ = model.path_index(g)
        w = weight / len(golds)
        for i, row in enumerate(rows):
            others = sorted(support_set(trie, g, i + 1, support) - {g[i]})
            if others:
                c[row, index[g[i]]] += w * (1.0 - beta)
                c[row, [index[t] for t in others]] += w * beta / len(others)
            else:
                c[row, index[g[i]]] += w


def _lbls_value(lp, model, golds, beta, support):
    vocab = model.vocab
    total = 0.0
    for g in golds:
        rows, _ = model.path_index(g)
        total += lbls_loss(lp[rows], g, model.trie, beta, support, vocab)
    return total / len(golds)


def _ce_value(lp, model, golds):
    total = 0.0
    for g in golds:
        rows, cols = model.path_index(g)
        total -= float(lp[rows, cols].sum())
    return total / len(golds)


def _f(lp, model, rel, alpha):
    rows, cols = model.path_index(rel)
    return score(rel, [float(v) for v in lp[rows, cols]], alpha)


def _add_ctl(model, c, lp, item, alpha, lam, zeta, convention, weight):
    """Add hinge weights; returns (loss, smallest |hinge argument|)."""
    loss, gap = 0.0, math.inf
    for rel, positive in [(g, True) for g in item.golds] + [(n, False) for n in item.negatives]:
        f = _f(lp, model, rel, alpha)
        if convention == "likelihood_consistent":
            arg = f - lam if positive else zeta - f
            df = 1.0 if positive else -1.0
        else:
            arg = zeta - f if positive else f - zeta
            df = -1.0 if positive else 1.0
        gap = min(gap, abs(arg))
        if arg > 0:
            loss += arg
            rows, cols = model.path_index(rel)
            # d f / d(-log p_j) = 1 / |r|^alpha
            np.add.at(c, (rows, cols), weight * df / len(rel) ** alpha)
    return loss, gap


def sample_objective(
    model: LogLinearModel,
    item: TrainItem,
    kind: str,
    train: TrainConfig,
    decode: DecodeConfig,
) -> tuple[LossParts, np.ndarray, object]:
    """Loss value, d(loss)/d(logits) per inner node, and the encoded sample."""
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    enc = model.encode(item.sample)
    lp = model.node_logprobs(enc)
    c = np.zeros_like(lp)
    parts = LossParts()
    beta, support = train.lbls.beta, train.lbls.support
    if kind == "ce":
        _add_ce(model, c, item.golds, 1.0)
        parts.ce = parts.total = _ce_value(lp, model, item.golds)
    elif kind == "lbls":
        _add_lbls(model, c, item.golds, beta, support, 1.0)
        parts.lbls = parts.total = _lbls_value(lp, model, item.golds, beta, support)
    else:
        ctl, parts.kink_gap = _add_ctl(
            model, c, lp, item, decode.alpha, decode.lam, train.zeta, decode.convention, 1.0
        )
        parts.ctl = ctl
        if kind == "ctl":
            parts.total = ctl
        elif kind == "ctl+ce":
            _add_ce(model, c, item.golds, train.mu)
            parts.ce = _ce_value(lp, model, item.golds)
            parts.total = ctl + train.mu * parts.ce
        else:
            _add_lbls(model, c, item.golds, beta, support, train.mu)
            parts.lbls = _lbls_value(lp, model, item.golds, beta, support)
            parts.total = combined_loss(parts.lbls, ctl, train.mu)
    if not math.isfinite(parts.total):
        raise NumericError(f"non-finite loss on sample {item.sample.id}")
    dlogits = c.sum(axis=1, keepdims=True) * np.exp(lp) - c
    return parts, dlogits, enc


def loss_gradient(
    model: LogLinearModel,
    batch: Sequence[TrainItem],
    kind: str,
    train: TrainConfig,
    decode: DecodeConfig,
) -> tuple[LossParts, np.ndarray]:
    """Mean loss over ``batch`` and its analytic gradient w.r.t. the weights."""
    if not batch:
        raise ConfigError("empty batch")
    grad = np.zeros_like(model.params.weights)
    agg = LossParts()
    for item in batch:
        parts, dlogits, enc = sample_objective(model, item, kind, train, decode)
        model.backward(enc, dlogits, grad)
        agg.ce += parts.ce
        agg.lbls += parts.lbls
        agg.ctl += parts.ctl
        agg.total += parts.total
        agg.kink_gap = min(agg.kink_gap, parts.kink_gap)
    n = len(batch)
    grad /= n
    agg.ce, agg.lbls, agg.ctl, agg.total = agg.ce / n, agg.lbls / n, agg.ctl / n, agg.total / n
    return agg, grad


# ---------------------------------------------------------------- training loop


def make_items(samples: Sequence[FormattedSample]) -> list[TrainItem]:
    return [TrainItem(s, [tuple(g) for g in s.gold_relation_tokens]) for s in samples]


def _with_negatives(item, schema, config, epoch, idx) -> TrainItem:
    golds = [schema.label_of(g) for g in item.golds]
    negs = sample_negatives(
        schema, golds, config.pool_size, [config.seed, epoch, idx], config.pool_mode
    )
    return TrainItem(item.sample, item.golds, [schema.tokens_of(l) for l in negs])


def train(
    samples: Sequence[FormattedSample],
    schema: RelationSchema,
    trie: RelationTrie,
    config: TrainConfig,
    decode: DecodeConfig,
    dev_eval: Callable[[LogLinearModel], dict] | None = None,
    model: LogLinearModel | None = None,
) -> tuple[LogLinearModel, list[dict]]:
    """Minibatch gradient descent with linear warmup/decay.

    ``dev_eval`` is called after every epoch and its dict is merged into the
    epoch record (the CLI passes a dev-set micro-F1 evaluator).
    """
    if not samples:
        raise DataError("empty training set")
    if model is None:
        model = LogLinearModel(build_params(trie, samples), trie)
    items = make_items(samples)
    kind = config.loss_kind
    uses_ctl = kind in ("ctl", "ctl+ce", "combined")
    n_batches = math.ceil(len(items) / config.batch_size)
    total_steps = config.epochs * n_batches
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(items))
        sums = LossParts()
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = [
                _with_negatives(items[i], schema, config, epoch, int(i)) if uses_ctl else items[i]
                for i in idx
            ]
            step += 1
            try:
                with np.errstate(over="raise", invalid="raise"):
                    parts, grad = loss_gradient(model, batch, kind, config, decode)
                    if not np.all(np.isfinite(grad)):
                        raise NumericError("non-finite gradient")
                    lr = learning_rate(step, total_steps, config.step_size)
                    model.params = apply_update(model.params, grad, lr)
            except (NumericError, FloatingPointError) as exc:
                raise NumericError(f"epoch {epoch + 1} step {step}: {exc}") from exc
            w = len(idx)
            sums.ce += parts.ce * w
            sums.lbls += parts.lbls * w
            sums.ctl += parts.ctl * w
            sums.total += parts.total * w
        n = len(items)
        record = {
            "epoch": epoch + 1,
            "loss": sums.total / n,
            "ce": sums.ce / n,
            "lbls": sums.lbls / n,
            "ctl": sums.ctl / n,
        }
        if dev_eval is not None:
            record.update(dev_eval(model))
        log.info("epoch %d loss %.4f", epoch + 1, record["loss"])
        history.append(record)
    return model, history
