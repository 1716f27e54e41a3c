"""End-to-end acceptance checks, one verdict line per criterion."""
import math
import time
from collections import Counter

import numpy as np
import pytest

from relinfill.cli import main
from relinfill.data_io import SynthSpec, class_key, generate_synthetic, low_resource_sample, write_synthetic
from relinfill.decoding import DecodeConfig, brute_force_decode, pgc_decode, score
from relinfill.evaluation import h_at_m, h_index, train_and_evaluate
from relinfill.templating import render
from relinfill.training import ABLATIONS, TrainConfig, ce_loss, lbls_distribution, lbls_loss, sample_negatives

from helpers import LetterDistance, StubModel, gradient_check, gradient_fixture, random_model, random_schema

EPO_SPEC = SynthSpec(n_relations=10, n_train=2000, n_dev=500, n_test=500, epo_rate=0.3, seed=7)
EPO_TRAIN = TrainConfig(seed=7)


def test_01_trie_validity(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    bad = total = 0
    for n in range(1000):
        schema = random_schema(rng, max_relations=20)
        model, sample, trie = random_model(schema, seed=n, scale=3.0)
        valid = {r.tokens for r in schema.relations}
        out = pgc_decode(model, sample, trie, DecodeConfig(beam_size=int(rng.integers(1, 9))))
        total += len(out)
        bad += sum(c.tokens not in valid for c in out)
    elapsed = time.perf_counter() - start
    verdict("01 trie validity", bad == 0 and elapsed < 60,
            f"{total - bad}/{total} outputs valid over 1000 pairs in {elapsed:.1f}s")


def test_02_oracle_equivalence(verdict):
    rng = np.random.default_rng(2)
    n_models = 200
    mismatched = {"branching": 0, "paths": 0}
    worst = {"branching": 0.0, "paths": 0.0}
    for n in range(n_models):
        schema = random_schema(rng, max_relations=50, max_len=4)
        model, sample, trie = random_model(schema, seed=n, scale=1.5)
        for name, k in (("branching", trie.max_branching()), ("paths", len(schema))):
            beam = {c.tokens: c.f for c in pgc_decode(model, sample, trie, DecodeConfig(beam_size=k))}
            exact = {c.tokens: c.f for c in brute_force_decode(model, sample, trie, k)}
            if set(beam) != set(exact):
                mismatched[name] += 1
            else:
                worst[name] = max([worst[name], *(abs(beam[t] - exact[t]) for t in beam)])
    # the smallest admissible beam decides the verdict; the exhaustive beam is reported alongside
    ok = mismatched["branching"] == 0 and worst["branching"] <= 1e-9
    verdict("02 oracle equivalence", ok,
            f"K = max branching: {mismatched['branching']}/{n_models} models differ from the exhaustive "
            f"top-K (max |df| where equal {worst['branching']:.1e}); K = |schema|: "
            f"{mismatched['paths']}/{n_models} differ (max |df| {worst['paths']:.1e})")


def test_03_score_spot_value(verdict):
    f = score(("r", "<E>"), (math.log(0.5), math.log(0.5)), 0.6)
    target = 0.914609
    verdict("03 score spot value", abs(f - target) <= 1e-6,
            f"f = {f:.10f}, target {target} +/- 1e-6, gap {abs(f - target):.2e}")


def test_04_smoothing(verdict):
    rng = np.random.default_rng(4)
    worst_sum = worst_gold = worst_ce = 0.0
    for n in range(200):
        schema = random_schema(rng)
        model, sample, trie = random_model(schema, seed=n, scale=2.0)
        beta = float(rng.uniform(0.01, 0.9))
        for rel in schema.relations:
            gold = rel.tokens
            for pos in range(1, len(gold) + 1):
                for support in ("layer", "siblings"):
                    dist = lbls_distribution(trie, gold, pos, beta, support)
                    worst_sum = max(worst_sum, abs(dist.sum() - 1.0))
                    others = (trie.layer_tokens(pos) if support == "layer" else trie.siblings(gold[:pos]))
                    expected = 1.0 if others == {gold[pos - 1]} else 1.0 - beta
                    worst_gold = max(worst_gold, abs(dist[trie.vocab.index(gold[pos - 1])] - expected))
            steps = np.array([model.next_token_logprobs(sample, gold[:i]) for i in range(len(gold))])
            worst_ce = max(worst_ce, abs(lbls_loss(steps, gold, trie, 0.0) - ce_loss(steps, gold, trie.vocab)))
    ok = worst_sum <= 1e-9 and worst_gold <= 1e-12 and worst_ce <= 1e-12
    verdict("04 smoothing targets", ok,
            f"max |sum-1| {worst_sum:.1e}, max gold-mass error {worst_gold:.1e}, "
            f"max |lbls(beta=0)-ce| {worst_ce:.1e}")


def test_05_gradient_check(verdict):
    start = time.perf_counter()
    errors = {}
    for kind in ("ce", "lbls", "ctl", "combined"):
        model, items, train_cfg, decode = gradient_fixture(kind, seed=5)
        worst, checked, _ = gradient_check(model, items, kind, train_cfg, decode, n_coords=100, seed=5)
        assert checked >= 100
        errors[kind] = worst
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) <= 1e-4 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    verdict("05 gradient check", ok, f"max relative error {detail}; {elapsed:.1f}s")


@pytest.fixture(scope="session")
def epo_runs():
    schema, splits = generate_synthetic(EPO_SPEC)
    start = time.perf_counter()
    rows, models = {}, {}
    for variant in ABLATIONS:
        cfg = TrainConfig(**{**EPO_TRAIN.__dict__, "ablation": variant})
        report, model, _ = train_and_evaluate(splits["train"], splits["test"], cfg, DecodeConfig())
        rows[variant], models[variant] = report, model
    return schema, splits, rows, models, time.perf_counter() - start


def test_06_end_to_end_epo(verdict, epo_runs):
    _, _, rows, _, elapsed = epo_runs
    f1 = {k: r.f1 for k, r in rows.items()}
    ordered = f1["lbls+ctl"] >= max(f1["lbls"], f1["ctl"]) and max(f1["lbls"], f1["ctl"]) >= f1["ce"] \
        and f1["ctl"] >= f1["ce"]
    ok = f1["lbls+ctl"] >= 0.85 and ordered and elapsed < 600
    detail = ", ".join(f"{k} {v:.4f}" for k, v in f1.items())
    verdict("06 end-to-end EPO", ok, f"threshold micro-F1 {detail}; ordering {'holds' if ordered else 'broken'}; "
            f"{elapsed:.0f}s")


def test_07_margin_separation(verdict, epo_runs):
    schema, splits, _, models, _ = epo_runs
    model = models["lbls+ctl"]
    alpha = DecodeConfig().alpha
    gold_f, fake_f = [], []
    for idx, inst in enumerate(splits["test"].instances):
        sample = render(inst, "s1", schema)
        for g in sorted(inst.gold_relations):
            t = schema.tokens_of(g)
            gold_f.append(score(t, model.sequence_logprob(sample, t), alpha))
        for n in sample_negatives(schema, sorted(inst.gold_relations), 16, [7, idx]):
            t = schema.tokens_of(n)
            fake_f.append(score(t, model.sequence_logprob(sample, t), alpha))
    g, f = float(np.mean(gold_f)), float(np.mean(fake_f))
    verdict("07 margin separation", g < 1.0 < f, f"mean gold f {g:.4f}, lambda 1.0, mean fake f {f:.4f}")


def test_08_h_at_m(verdict, epo_runs):
    schema, splits, _, models, _ = epo_runs
    model = models["lbls+ctl"]
    test = splits["test"]
    full = h_at_m(model, test, [len(schema)])[len(schema)]
    values = h_at_m(model, test, list(range(1, len(schema) + 1)))
    in_range = all(0.0 <= v <= 1.0 for v in values.values())
    letters = type(schema).from_labels([f"L{w}" for w in "abcdefghij"], {f"L{w}": w for w in "abcdefghij"})
    stub = StubModel({w: float(i) for i, w in enumerate("abcdefghij")})
    three = h_index(stub, None, "Le", letters, 5, LetterDistance())
    ok = abs(full - 1.0) <= 1e-12 and in_range and abs(three - 3 / 7) <= 1e-9
    verdict("08 H@M sanity", ok, f"H@|schema| {full}, all M in [0,1]: {in_range}, 3-of-5 case {three:.12f}")


def _pipeline(root, data):
    common = ["--data", str(data), "--out", str(root), "--seed", "11"]
    assert main(["train", *common, "--epochs", "3"]) == 0
    assert main(["eval", *common, "--h-at-m", "1,5"]) == 0
    assert main(["decode", *common]) == 0
    return {name: (root / name).read_bytes() for name in ("checkpoint.bin", "report.jsonl", "summary.txt",
                                                           "decode.jsonl", "metrics.jsonl")}


def test_09_determinism(verdict, tmp_path):
    data = tmp_path / "data"
    write_synthetic(SynthSpec(n_train=300, n_dev=60, n_test=60, seed=3), data)
    first = _pipeline(tmp_path / "a", data)
    second = _pipeline(tmp_path / "b", data)
    differing = [k for k in first if first[k] != second[k]]
    verdict("09 determinism", not differing,
            f"{len(first) - len(differing)}/{len(first)} artifacts byte-identical" +
            (f"; differing {differing}" if differing else ""))


def test_10_low_resource(verdict, tmp_path):
    data = tmp_path / "data"
    splits = write_synthetic(SynthSpec(n_train=600, n_dev=100, n_test=100, seed=7), data)
    full = Counter(class_key(i) for i in splits["train"].instances)
    problems = []
    for n in (8, 16, 32):
        sub = low_resource_sample(splits["train"], n, seed=7)
        got = Counter(class_key(i) for i in sub.instances)
        if got != {k: min(n, c) for k, c in full.items()}:
            problems.append(f"N={n} counts")
        out = tmp_path / f"n{n}"
        common = ["--data", str(data), "--out", str(out), "--seed", "7"]
        if main(["train", *common, "--low-resource", str(n), "--epochs", "3"]) != 0 or \
                main(["eval", *common]) != 0 or not (out / "report.jsonl").exists():
            problems.append(f"N={n} pipeline")
    verdict("10 low-resource harness", not problems,
            "exact per-class counts and completed runs for N in 8, 16, 32" if not problems else "; ".join(problems))
