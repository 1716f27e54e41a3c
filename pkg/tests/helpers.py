"""Shared builders for random schemas, models and scripted step models."""
from dataclasses import replace

import numpy as np

from relinfill.model import LogLinearModel, build_params
from relinfill.schema import END, RelationSchema, build_trie
from relinfill.templating import REInstance, render

WORDS = [f"w{i}" for i in range(6)]

ANCHOR = REInstance(
    "anchor",
    ("Ada", "Byron", "lived", "in", "London", "."),
    (0, 2),
    (4, 5),
    "PERSON",
    "CITY",
    frozenset({"r0"}),
)


def anchor(schema) -> REInstance:
    """ANCHOR relabelled with the first relation of ``schema``."""
    return replace(ANCHOR, gold_relations=frozenset({schema.labels[0]}))


def random_schema(rng, max_relations=15, max_len=4, words=WORDS) -> RelationSchema:
    """Distinct random word sequences over a tiny alphabet (so prefixes collide)."""
    n = int(rng.integers(1, max_relations + 1))
    phrases = set()
    while len(phrases) < n:
        length = int(rng.integers(1, max_len + 1))
        phrases.add(tuple(rng.choice(words, length)))
    labels = [f"r{i}" for i in range(n)]
    return RelationSchema.from_labels(labels, {l: " ".join(p) for l, p in zip(labels, sorted(phrases))})


def random_model(schema, seed=0, scale=1.0, style="s2"):
    trie = build_trie(schema)
    sample = render(anchor(schema), style, schema)
    return LogLinearModel(build_params(trie, [sample], init_scale=scale, seed=seed), trie), sample, trie


class ScriptedModel:
    """Step model whose next-token distribution is fixed per prefix.

    ``table`` maps a prefix tuple to ``{token: probability}``; prefixes not in
    the table get a uniform distribution over their trie children. Tokens with
    no mass get ``-inf``.
    """

    def __init__(self, trie, table):
        self.trie = trie
        self.table = table
        self.vocab = trie.vocab
        self.token_index = {t: i for i, t in enumerate(self.vocab)}

    def next_token_logprobs(self, sample, partial):
        partial = tuple(partial)
        probs = self.table.get(partial)
        if probs is None:
            kids = sorted(self.trie.allowed_next(partial))
            probs = {t: 1.0 / len(kids) for t in kids}
        out = np.full(len(self.vocab), -np.inf)
        for tok, p in probs.items():
            out[self.token_index[tok]] = np.log(p)
        return out

    def sequence_logprob(self, sample, relation):
        return [float(self.next_token_logprobs(sample, relation[:i])[self.token_index[t]])
                for i, t in enumerate(relation)]


class StubModel:
    """Fixed per-relation log-likelihood, independent of the sample."""

    def __init__(self, nll):
        self.nll = nll

    def sequence_logprob(self, sample, tokens):
        return [-self.nll[tokens[0]]] + [0.0] * (len(tokens) - 1)


class LetterDistance:
    kind = "stub"

    def key(self, a, b):
        return (-abs(ord(a.tokens[0]) - ord(b.tokens[0])),)


def pruning_trap():
    """Schema and scripted model where beam search with K = max branching misses the best paths.

    Both depth-2 prefixes that survive pruning fan out into two halves, while
    the pruned prefixes end immediately with probability one.
    """
    phrases = {
        "axm": "a x m", "axn": "a x n", "ay": "a y",
        "bum": "b u m", "bun": "b u n", "bv": "b v",
    }
    schema = RelationSchema.from_labels(sorted(phrases), phrases)
    trie = build_trie(schema)
    table = {
        (): {"a": 0.5, "b": 0.5},
        ("a",): {"x": 0.5, "y": 0.5},
        ("b",): {"u": 0.55, "v": 0.45},
        ("a", "y"): {END: 1.0},
        ("b", "v"): {END: 1.0},
    }
    return schema, trie, ScriptedModel(trie, table)


# ---------------------------------------------------------------- finite-difference oracle


def reference_objective(model, items, kind, train, decode):
    """Batch-mean loss rebuilt from the public per-term functions.

    Returns the loss and the on/off pattern of every hinge, so callers can
    tell when a perturbation crossed a kink.
    """
    from relinfill.decoding import score
    from relinfill.training import ce_loss, combined_loss, contrastive_loss, lbls_loss

    vocab, trie = model.vocab, model.trie
    beta, support = train.lbls.beta, train.lbls.support
    total, pattern = 0.0, []
    for item in items:
        ce = lb = 0.0
        for g in item.golds:
            steps = np.array([model.next_token_logprobs(item.sample, g[:i]) for i in range(len(g))])
            ce += ce_loss(steps, g, vocab) / len(item.golds)
            lb += lbls_loss(steps, g, trie, beta, support, vocab) / len(item.golds)
        pos = [score(g, model.sequence_logprob(item.sample, g), decode.alpha) for g in item.golds]
        neg = [score(n, model.sequence_logprob(item.sample, n), decode.alpha) for n in item.negatives]
        ctl = contrastive_loss(pos, neg, decode.lam, train.zeta, decode.convention)
        if decode.convention == "likelihood_consistent":
            pattern += [f > decode.lam for f in pos] + [f < train.zeta for f in neg]
        else:
            pattern += [f < train.zeta for f in pos] + [f > train.zeta for f in neg]
        total += {
            "ce": ce,
            "lbls": lb,
            "ctl": ctl,
            "ctl+ce": ctl + train.mu * ce,
            "combined": combined_loss(lb, ctl, train.mu) if kind == "combined" else 0.0,
        }[kind]
    return total / len(items), tuple(pattern)


def active_rows(model, items):
    rows = set(int(r) for r in model.row_node_feat) | set(int(r) for r in model.row_pos_feat)
    for item in items:
        for ids in model.encode(item.sample).context:
            rows.update(int(i) for i in ids)
    return sorted(rows)


def gradient_check(model, items, kind, train, decode, n_coords=100, seed=0, h=1e-5):
    """Max relative error of the analytic gradient against central differences.

    Coordinates whose perturbation flips any hinge are skipped and resampled.
    Returns ``(max_rel_error, checked, skipped)``.
    """
    from relinfill.training import loss_gradient

    rng = np.random.default_rng(seed)
    params = model.params
    _, grad = loss_gradient(model, items, kind, train, decode)
    rows = active_rows(model, items)
    n_cols = params.weights.shape[1]
    worst, checked, skipped = 0.0, 0, 0
    seen = set()
    while checked < n_coords and len(seen) < len(rows) * n_cols:
        coord = (int(rng.choice(rows)), int(rng.integers(n_cols)))
        if coord in seen:
            continue
        seen.add(coord)
        values = []
        for sign in (1, -1):
            w = params.weights.copy()
            w[coord] += sign * h
            model.params = params.replace_weights(w)
            values.append(reference_objective(model, items, kind, train, decode))
        model.params = params
        _, base_pattern = reference_objective(model, items, kind, train, decode)
        if values[0][1] != base_pattern or values[1][1] != base_pattern:
            skipped += 1
            continue
        numeric = (values[0][0] - values[1][0]) / (2 * h)
        analytic = grad[coord]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
        checked += 1
    return worst, checked, skipped


def gradient_fixture(kind, seed=0, n_items=3, scale=0.5):
    """A small random model and batch with gold and fake relations for ``kind``."""
    from relinfill.decoding import DecodeConfig
    from relinfill.training import TrainConfig, TrainItem, sample_negatives

    rng = np.random.default_rng(seed)
    schema = random_schema(rng, max_relations=8)
    while len(schema) < 4:
        schema = random_schema(rng, max_relations=8)
    trie = build_trie(schema)
    items, samples = [], []
    for k in range(n_items):
        golds = list(rng.choice(schema.labels, size=1 + k % 2, replace=False))
        inst = REInstance(f"g{k}", ANCHOR.tokens[:3 + k] + ANCHOR.tokens[3:], ANCHOR.subj_span,
                          (ANCHOR.obj_span[0] + k, ANCHOR.obj_span[1] + k), "PERSON", "CITY", golds)
        sample = render(inst, "s2", schema)
        negs = sample_negatives(schema, golds, 4, [seed, k])
        items.append(TrainItem(sample, [schema.tokens_of(g) for g in golds],
                               [schema.tokens_of(n) for n in negs]))
        samples.append(sample)
    model = LogLinearModel(build_params(trie, samples, init_scale=scale, seed=seed), trie)
    return model, items, TrainConfig(), DecodeConfig()
