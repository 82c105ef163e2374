import numpy as np
import pytest

from slotex import evaluation as ev
from slotex.data import CorpusManifest, Example, generate_synthetic, head_word_index
from slotex.heads import DecodedTriple
from slotex.matching import GoldTriple


def _triple(ss, se, os_, oe, rel, score=1.0):
    return DecodedTriple(ss, se, os_, oe, rel, score)


def brute_force_counts(preds, golds, mode, head_word="last"):
    """Exhaustive matched-flag pair scan."""
    def pkey(p):
        if mode == "exact":
            return (p.ss, p.se, p.rel, p.os, p.oe)
        return (head_word_index((p.ss, p.se), head_word), p.rel,
                head_word_index((p.os, p.oe), head_word))

    def gkey(g):
        if mode == "exact":
            return g.key()
        return (head_word_index(g.subject_span, head_word), g.rel,
                head_word_index(g.object_span, head_word))

    uniq = []
    seen = set()
    for p in preds:
        k = (p.ss, p.se, p.rel, p.os, p.oe)
        if k not in seen:
            seen.add(k)
            uniq.append(p)
    used = [False] * len(golds)
    correct = 0
    for p in uniq:
        for j, g in enumerate(golds):
            if not used[j] and pkey(p) == gkey(g):
                used[j] = True
                correct += 1
                break
    return correct, len(uniq), len(golds)


def test_match_exact_single_triple_both_modes():
    gold = GoldTriple(1, 2, 4, 5, 3)
    pred = _triple(1, 2, 4, 5, 3)
    for mode in ("exact", "partial"):
        assert ev.match_triples([pred], [gold], mode) == (1, 1, 1)


def test_partial_credits_head_word_only():
    gold = GoldTriple(1, 2, 4, 5, 3)
    pred = _triple(2, 2, 4, 5, 3)  # subject start off by one, same last token
    assert ev.match_triples([pred], [gold], "exact") == (0, 1, 1)
    assert ev.match_triples([pred], [gold], "partial") == (1, 1, 1)
    # under the first-token rule the heads differ
    assert ev.match_triples([pred], [gold], "partial", head_word="first") == (0, 1, 1)


def test_match_deduplicates_predictions():
    gold = GoldTriple(1, 2, 4, 5, 3)
    preds = [_triple(1, 2, 4, 5, 3), _triple(1, 2, 4, 5, 3)]
    assert ev.match_triples(preds, [gold], "exact") == (1, 1, 1)


def test_each_gold_credited_once():
    gold = GoldTriple(1, 2, 4, 5, 3)
    preds = [_triple(1, 2, 4, 5, 3), _triple(1, 1, 4, 5, 3)]
    # second pred differs exactly but shares the partial key
    assert ev.match_triples(preds, [gold], "partial") == (1, 2, 1)


def test_match_counts_vs_bruteforce(rng):
    for _ in range(300):
        n = 10
        golds = []
        for _ in range(int(rng.integers(0, 4))):
            ss = int(rng.integers(1, n - 1)); se = int(rng.integers(ss, n - 1))
            os_ = int(rng.integers(1, n - 1)); oe = int(rng.integers(os_, n - 1))
            golds.append(GoldTriple(ss, se, os_, oe, int(rng.integers(0, 3))))
        preds = []
        for _ in range(int(rng.integers(0, 5))):
            if golds and rng.random() < 0.5:
                g = golds[int(rng.integers(0, len(golds)))]
                preds.append(_triple(g.ss, g.se, g.os, g.oe, g.rel))
            else:
                ss = int(rng.integers(1, n - 1)); se = int(rng.integers(ss, n - 1))
                os_ = int(rng.integers(1, n - 1)); oe = int(rng.integers(os_, n - 1))
                preds.append(_triple(ss, se, os_, oe, int(rng.integers(0, 3))))
        for mode in ("exact", "partial"):
            assert ev.match_triples(preds, golds, mode) == \
                brute_force_counts(preds, golds, mode)


def test_match_symmetric_under_permutation(rng):
    golds = [GoldTriple(1, 1, 3, 3, 0), GoldTriple(2, 2, 5, 5, 1),
             GoldTriple(1, 2, 5, 6, 2)]
    preds = [_triple(1, 1, 3, 3, 0), _triple(2, 2, 5, 5, 2), _triple(4, 4, 6, 6, 1)]
    base = ev.match_triples(preds, golds, "exact")
    for _ in range(5):
        p = [preds[i] for i in rng.permutation(len(preds))]
        g = [golds[i] for i in rng.permutation(len(golds))]
        assert ev.match_triples(p, g, "exact") == base


def _example(tokens, golds, head_word="last"):
    partial = [(head_word_index(g.subject_span, head_word), g.rel,
                head_word_index(g.object_span, head_word)) for g in golds]
    from slotex.data import classify_overlap
    return Example(" ".join(tokens), list(tokens), golds, partial,
                   classify_overlap(golds), len(golds))


def test_report_perfect_predictions():
    golds = [GoldTriple(1, 1, 3, 3, 0)]
    ex = _example(["a", "b", "c"], golds)
    report = ev.compute_report([(ex, [_triple(1, 1, 3, 3, 0)])])
    for mode in ("exact", "partial"):
        assert report.overall[mode].precision == 1.0
        assert report.overall[mode].recall == 1.0
        assert report.overall[mode].f1 == 1.0


def test_report_zero_predictions_convention():
    ex = _example(["a", "b", "c"], [GoldTriple(1, 1, 3, 3, 0)])
    report = ev.compute_report([(ex, [])])
    stats = report.overall["exact"]
    assert stats.precision == 0.0 and stats.recall == 0.0 and stats.f1 == 0.0


def test_report_slices_recombine_to_overall(rng):
    manifest = CorpusManifest(train_size=20, valid_size=0, test_size=0, seed=13)
    examples, _, _ = generate_synthetic(manifest)
    scored = []
    for ex in examples:
        preds = []
        for g in ex.golds:
            if rng.random() < 0.6:
                preds.append(_triple(g.ss, g.se, g.os, g.oe, g.rel))
        if rng.random() < 0.3:
            preds.append(_triple(1, 1, 2, 2, 0))
        scored.append((ex, preds))
    report = ev.compute_report(scored)
    for mode in ("exact", "partial"):
        overall = report.overall[mode]
        for sliced in (report.per_pattern[mode], report.per_count[mode]):
            assert sum(s.correct for s in sliced.values()) == overall.correct
            assert sum(s.predicted for s in sliced.values()) == overall.predicted
            assert sum(s.gold for s in sliced.values()) == overall.gold


def test_exact_correct_never_exceeds_partial(rng):
    manifest = CorpusManifest(train_size=30, valid_size=0, test_size=0, seed=23)
    examples, _, _ = generate_synthetic(manifest)
    for ex in examples:
        preds = [_triple(g.ss, g.se, g.os, g.oe, g.rel) for g in ex.golds[:1]]
        if ex.golds and rng.random() < 0.5:
            g = ex.golds[0]
            preds.append(_triple(g.ss, g.se, g.os, g.oe,
                                 (g.rel + 1) % 10))
        exact = ev.match_triples(preds, ex.golds, "exact")
        partial = ev.match_triples(preds, ex.golds, "partial")
        assert exact[0] <= partial[0]


def test_format_report_contains_slices():
    ex = _example(["a", "b", "c"], [GoldTriple(1, 1, 3, 3, 0)])
    report = ev.compute_report([(ex, [_triple(1, 1, 3, 3, 0)])])
    text = ev.format_report(report, breakdown=True)
    assert "exact" in text and "Normal" in text and "N=1" in text
