"""Prefix-given constrained beam search over the relation trie, scoring and selection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import IO, Iterable, Protocol, Sequence

import numpy as np

from .errors import ConfigError, ContractError, OracleError
from .schema import END, NO_RELATION, RelationTrie
from .templating import FormattedSample

CONVENTIONS = ("likelihood_consistent", "keep_high_f")


class StepModel(Protocol):
    vocab: tuple[str, ...]
    token_index: dict

    def next_token_logprobs(self, sample: FormattedSample, partial: Sequence[str]) -> np.ndarray:
        ...


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 16
    alpha: float = 0.6
    lam: float = 1.0
    convention: str = "likelihood_consistent"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam size must be >= 1, got {self.beam_size}")
        if self.alpha < 0:
            raise ConfigError(f"length penalty must be >= 0, got {self.alpha}")
        if self.lam <= 0:
            raise ConfigError(f"borderline must be > 0, got {self.lam}")
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"unknown convention {self.convention!r}")


@dataclass(frozen=True)
class CandidateRelation:
    tokens: tuple[str, ...]
    token_logprobs: tuple[float, ...]
    f: float
    label: str | None = None
    established: bool = False

    @property
    def logprob(self) -> float:
        return _total(self.token_logprobs)


def _total(logprobs: Iterable[float]) -> float:
    # one left-to-right summation shared by beam ranking, oracle and scoring
    acc = 0.0
    for v in logprobs:
        acc += v
    return acc


def score(tokens: Sequence[str], token_logprobs: Sequence[float], alpha: float) -> float:
    """Length-normalised negative log-likelihood; lower means more likely.

    ``len(tokens)`` includes the END sentinel.
    """
    if not tokens:
        raise ContractError("cannot score an empty candidate")
    if len(tokens) != len(token_logprobs):
        raise ContractError("one log-prob per token required")
    return -_total(token_logprobs) / len(tokens) ** alpha


def _rank_key(tokens: tuple[str, ...], total: float):
    return (-total, tokens)


def _check_vocab(model: StepModel, trie: RelationTrie) -> None:
    missing = [t for t in trie.vocab if t not in model.token_index]
    if missing:
        raise ConfigError(f"model vocabulary lacks trie tokens {missing}")


def _candidate(trie, tokens, logps, alpha) -> CandidateRelation:
    return CandidateRelation(tokens, logps, score(tokens, logps, alpha), trie.label_of(tokens))


def pgc_decode(
    model: StepModel, sample: FormattedSample, trie: RelationTrie, config: DecodeConfig
) -> list[CandidateRelation]:
    """Beam search seeded with the known prefix and restricted to trie children.

    Partial beams compete on summed log-probability; a beam that emits END is
    frozen and keeps competing until every kept beam is frozen. Candidates are
    returned by ascending ``f``.
    """
    _check_vocab(model, trie)
    index = model.token_index
    # (tokens, logps, total, done)
    beams: list[tuple[tuple[str, ...], tuple[float, ...], float, bool]] = [((), (), 0.0, False)]
    for _ in range(trie.depth):
        pool = []
        for tokens, logps, total, done in beams:
            if done:
                pool.append((tokens, logps, total, True))
                continue
            lp = model.next_token_logprobs(sample, tokens)
            for tok in sorted(trie.allowed_next(tokens)):
                v = float(lp[index[tok]])
                pool.append((tokens + (tok,), logps + (v,), total + v, tok == END))
        pool.sort(key=lambda b: _rank_key(b[0], b[2]))
        beams = pool[: config.beam_size]
        if all(b[3] for b in beams):
            break
    cands = [_candidate(trie, t, lp, config.alpha) for t, lp, _, done in beams if done]
    return sort_by_score(cands)


def brute_force_decode(
    model: StepModel,
    sample: FormattedSample,
    trie: RelationTrie,
    k: int,
    alpha: float = 0.6,
    max_paths: int = 10_000,
) -> list[CandidateRelation]:
    """Exact top-``k`` by summed log-probability over every trie path (test oracle)."""
    _check_vocab(model, trie)
    scored = []
    for n, path in enumerate(trie.paths()):
        if n >= max_paths:
            raise OracleError(f"more than {max_paths} trie paths; refusing to enumerate")
        logps = []
        for i, tok in enumerate(path):
            lp = model.next_token_logprobs(sample, path[:i])
            logps.append(float(lp[model.token_index[tok]]))
        scored.append((path, tuple(logps), _total(logps)))
    scored.sort(key=lambda b: _rank_key(b[0], b[2]))
    return sort_by_score([_candidate(trie, p, lp, alpha) for p, lp, _ in scored[:k]])


def sort_by_score(cands: Iterable[CandidateRelation]) -> list[CandidateRelation]:
    return sorted(cands, key=lambda c: (c.f, c.tokens))


def select(
    candidates: Sequence[CandidateRelation],
    config: DecodeConfig,
    no_relation_label: str = NO_RELATION,
) -> list[CandidateRelation]:
    """Keep candidates on the established side of the borderline.

    Falls back to the single best candidate when nothing passes, and drops the
    no-relation candidate whenever a real relation is established.
    """
    if not candidates:
        raise ContractError("select needs at least one candidate")
    if config.convention == "likelihood_consistent":
        kept = [c for c in candidates if c.f < config.lam]
    else:
        kept = [c for c in candidates if c.f > config.lam]
    if not kept:
        kept = [min(candidates, key=lambda c: (c.f, c.tokens))]
    if any(c.label != no_relation_label for c in kept):
        kept = [c for c in kept if c.label != no_relation_label]
    return [replace(c, established=True) for c in sort_by_score(kept)]


def mark_established(
    candidates: Sequence[CandidateRelation], selected: Sequence[CandidateRelation]
) -> list[CandidateRelation]:
    chosen = {c.tokens for c in selected}
    return [replace(c, established=c.tokens in chosen) for c in candidates]


def candidate_records(instance_id: str, candidates: Sequence[CandidateRelation]) -> list[dict]:
    return [
        {
            "id": instance_id,
            "tokens": list(c.tokens),
            "label": c.label,
            "token_logprobs": [float(v) for v in c.token_logprobs],
            "f": float(c.f),
            "established": bool(c.established),
        }
        for c in candidates
    ]


def write_records(fh: IO[str], records: Iterable[dict]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def read_candidate_records(lines: Iterable[str]) -> dict[str, list[CandidateRelation]]:
    out: dict[str, list[CandidateRelation]] = {}
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        out.setdefault(rec["id"], []).append(
            CandidateRelation(
                tuple(rec["tokens"]),
                tuple(rec["token_logprobs"]),
                rec["f"],
                rec.get("label"),
                rec.get("established", False),
            )
        )
    return out
