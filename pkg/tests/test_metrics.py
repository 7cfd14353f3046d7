import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maac.metrics import (
    CiderD, EvalPair, MetricError, bleu_n, cider_d, cider_d_per_clip, evaluate, rouge_l, rouge_l_clip, spider,
)
from oracles import metric_oracle

DATA = Path(__file__).parent / "data"


def golden_pairs():
    corpus = json.loads((DATA / "golden_corpus.json").read_text())
    return [EvalPair.from_text(c["clip_id"], c["hypothesis"], c["references"]) for c in corpus["clips"]]


def identical_corpus():
    texts = ["a dog barks at the mailman", "rain falls on a tin roof", "an engine idles then stops",
             "birds sing in the early morning", "water drips into a metal bucket"]
    return [EvalPair.from_text(f"i{k}", t, [t, t]) for k, t in enumerate(texts)]


def test_bleu_examples():
    assert bleu_n([EvalPair.from_text("c", "a cat sat", ["a cat sat"])], 1) == 1.0
    assert bleu_n([EvalPair.from_text("c", "the the the", ["the cat"])], 1) == pytest.approx(1 / 3, abs=1e-15)
    assert bleu_n([EvalPair.from_text("c", "dog barks", ["a cat sat"])], 2) == 0.0
    with pytest.raises(MetricError):
        bleu_n([], 1)


def test_bleu_smoothing_flag():
    pairs = [EvalPair.from_text("c", "a dog runs", ["a cat sat"])]
    assert bleu_n(pairs, 2) == 0.0
    assert bleu_n(pairs, 2, smoothing=True) > 0.0


def test_rouge_examples():
    assert rouge_l_clip("a b c".split(), ["a b c".split()]) == 1.0
    assert rouge_l_clip("a b".split(), ["c d".split()]) == 0.0
    f = rouge_l_clip("a b c d".split(), ["a c d".split()])
    assert f == pytest.approx((1 + 1.44) * 0.75 / (1 + 1.44 * 0.75), abs=1e-15)
    assert f == pytest.approx(0.8798, abs=1e-4)
    with pytest.raises(MetricError):
        rouge_l_clip(["a"], [[]])


def test_cider_examples():
    pairs = [EvalPair.from_text("a", "x y z", ["p q r"]), EvalPair.from_text("b", "p q", ["s t"])]
    assert cider_d_per_clip(pairs)[0] == 0.0
    with pytest.raises(MetricError):
        cider_d([])


def test_cider_single_clip_scores_zero():
    # one clip: every n-gram has document frequency 1 = corpus size, so idf vanishes
    assert cider_d([EvalPair.from_text("a", "a dog barks", ["a dog barks"])]) == 0.0


def test_identical_corpus_maxima_exact():
    pairs = identical_corpus()
    for n in range(1, 5):
        assert bleu_n(pairs, n) == 1.0
    assert rouge_l(pairs) == 1.0
    assert cider_d(pairs) == 10.0


def test_golden_values_match_oracle_file():
    want = json.loads((DATA / "golden_metrics.json").read_text())["values"]
    report = evaluate(golden_pairs())
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider_d"):
        assert abs(getattr(report, key) - want[key]) <= 1e-4


def test_oracle_agrees_on_random_corpora():
    rng = np.random.default_rng(0)
    words = "a the dog cat barks runs car passes bird sings loud".split()
    for _ in range(10):
        hyps, refs = [], []
        for _ in range(rng.integers(2, 6)):
            hyps.append([words[i] for i in rng.integers(0, len(words), rng.integers(1, 9))])
            refs.append([[words[i] for i in rng.integers(0, len(words), rng.integers(1, 9))]
                         for _ in range(rng.integers(1, 4))])
        pairs = [EvalPair(str(i), h, r) for i, (h, r) in enumerate(zip(hyps, refs))]
        want = metric_oracle.all_scores(hyps, refs)
        got = evaluate(pairs)
        for key, v in want.items():
            assert getattr(got, key) == pytest.approx(v, abs=1e-12)


@given(st.permutations(list(range(5))), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_metrics_permutation_invariant(order, seed):
    pairs = golden_pairs()
    rng = np.random.default_rng(seed)
    shuffled = []
    for i in order:
        p = pairs[i]
        refs = [p.references[j] for j in rng.permutation(len(p.references))]
        shuffled.append(EvalPair(p.clip_id, p.hypothesis, refs))
    a, b = evaluate(pairs), evaluate(shuffled)
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider_d"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-12)


def test_metric_ranges_on_golden():
    r = evaluate(golden_pairs())
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"):
        assert 0.0 <= getattr(r, key) <= 1.0
    assert all(0.0 <= s <= 10.0 for s in cider_d_per_clip(golden_pairs()))


def test_spider_examples():
    assert spider(49.1, 13.1) == pytest.approx(31.1, abs=1e-12)
    assert spider(0.4, 0.4, mode="raw") == 0.4
    assert spider(4.0, 0.2, mode="unit") == pytest.approx(0.3)
    assert spider(4.0, None) is None
    with pytest.raises(MetricError):
        spider(1.0, 1.0, mode="pct")


def test_report_contract():
    r = evaluate(golden_pairs())
    assert "spider" not in r.to_dict() and "spice" not in r.to_dict()
    with_spice = evaluate(golden_pairs(), spice=0.131)
    d = json.loads(with_spice.to_json())
    assert d["spider"] == pytest.approx((d["cider_d"] + 0.131) / 2)
    table = r.table()
    assert f"{100 * r.bleu1:.1f}" in table and "CIDEr-D" in table


def test_eval_pair_needs_references():
    with pytest.raises(MetricError):
        EvalPair("c", ["a"], [])
    scorer = CiderD([[["a", "b"]], [["c"]]])
    with pytest.raises(MetricError):
        scorer.score(["a"], [])
