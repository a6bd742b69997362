import json
import math

import pytest

from ctisqa.datasets import QaPair
from ctisqa.errors import EmptyInput, FileFormatError, UnknownPairId
from ctisqa.metrics import (alignment, balanced_accuracy_by_aspect, bleu, closed_accuracy,
                            corpus_bleu, lcs_length, meteor_x, read_predictions, rouge_l,
                            rouge_l_prf, score_predictions, score_run, tokenize)
from oracles import lcs_brute

GRADES = ["Grade 1", "Grade 2", "Grade 3"]


def closed(pid, aspect, answer, qid="q01", options=GRADES):
    return QaPair(pid, pid.split(":")[0], qid, aspect, "", "closed", answer, list(options))


def test_tokenizer():
    assert tokenize("HER2 (3+), ER-positive.") == ["her2", "3+", "er-positive"]
    assert tokenize("  ") == []


def test_bleu_fixtures():
    assert bleu("the cat sat", "the cat sat") == 1.0
    assert bleu("the cat sat", ["the cat sat"], max_n=1) == 1.0
    assert bleu("the cat", "the cat sat", max_n=1) == pytest.approx(math.exp(1 - 3 / 2), abs=1e-12)
    assert bleu("the cat", "the cat sat", max_n=1) == pytest.approx(0.60653, abs=1e-5)
    assert bleu("dog", "the cat sat") == 0.0
    assert bleu("pT2", "pT2") == 1.0
    with pytest.raises(EmptyInput):
        bleu("", "x")


def test_corpus_bleu_aggregates_counts():
    hyps = ["the cat sat", "a dog"]
    refs = [["the cat sat on"], ["a dog"]]
    # 5 of 5 unigrams match; c=5, r=6
    assert corpus_bleu(hyps, refs, 1) == pytest.approx(math.exp(1 - 6 / 5), abs=1e-12)


def test_meteor_fixtures():
    assert meteor_x("the cat sat", "the cat sat") == pytest.approx(1 - 0.5 / 27, abs=1e-12)
    assert meteor_x("pT2", "pT2") == pytest.approx(0.5, abs=1e-12)
    assert meteor_x("a b", "c d") == 0.0
    # a b c vs c a b: best alignment has 2 chunks
    assert len(alignment(["a", "b", "c"], ["c", "a", "b"])) == 3
    p, r = 1.0, 1.0
    assert meteor_x("a b c", "c a b") == pytest.approx(p * r / (0.9 * p + 0.1 * r) * (1 - 0.5 * (2 / 3) ** 3))


def test_rouge_fixtures():
    assert rouge_l("a b c", "a b c") == 1.0
    assert rouge_l("a b c", "a c") == pytest.approx(0.8, abs=1e-12)
    assert lcs_length("a b c".split(), "c b a".split()) == 1 == lcs_brute("abc", "cba")
    p, r, f = rouge_l_prf("a b c", "a c")
    p2, r2, f2 = rouge_l_prf("a c", "a b c")
    assert (p, r) == (r2, p2) and f == f2


def test_closed_accuracy_fixture():
    bench = [closed(f"s{i}:q01", "Histological Features", "Grade 2") for i in range(4)]
    preds = {"s0:q01": "grade 2", "s1:q01": "Grade-2", "s2:q01": "GRADE 2.", "s3:q01": "Grade 3"}
    assert closed_accuracy(preds, bench) == 0.75
    assert closed_accuracy({p.pair_id: p.answer for p in bench}, bench) == 1.0
    assert closed_accuracy({p.pair_id: "banana" for p in bench}, bench) == 0.0
    with pytest.raises(UnknownPairId):
        closed_accuracy({"nope": "x"}, bench)


def test_balanced_accuracy_two_classes():
    bench = [closed("a:q01", "Histological Features", "Grade 1"),
             closed("b:q01", "Histological Features", "Grade 2"),
             closed("c:q01", "Histological Features", "Grade 2")]
    preds = {"a:q01": "Grade 1", "b:q01": "Grade 2", "c:q01": "Grade 3"}
    assert balanced_accuracy_by_aspect(preds, bench) == {"Histological Features": 0.75}


def test_open_answers_exact_match():
    pair = QaPair("s:q15", "s", "q15", "Staging", "", "open", "pT2")
    assert balanced_accuracy_by_aspect({"s:q15": "PT2."}, [pair]) == {"Staging": 1.0}
    assert balanced_accuracy_by_aspect({"s:q15": "pT2 N0"}, [pair]) == {"Staging": 0.0}


def test_score_identity_and_omissions():
    bench = [closed("a:q01", "Histological Features", "Grade 1"),
             QaPair("a:q15", "a", "q15", "Staging", "", "open", "pT2 pN1a")]
    rep = score_predictions({p.pair_id: p.answer for p in bench}, bench)
    assert rep.bleu1 == rep.bleu4 == rep.rouge_l == rep.closed_accuracy == rep.average == 1.0
    assert rep.meteor == pytest.approx(meteor_x("pT2 pN1a", "pT2 pN1a"))
    assert set(rep.per_aspect_balanced_accuracy) == {"Histological Features", "Staging"}
    row = rep.table().splitlines()[1].split()
    assert row[7] == "/"          # C.P.F. has no pairs
    only_closed = score_predictions({"a:q01": "Grade 1"}, bench)
    assert only_closed.bleu1 is None and only_closed.n_missing == 1


def test_prediction_files(tmp_path):
    bench = [closed("a:q01", "Histological Features", "Grade 1")]
    (tmp_path / "b.jsonl").write_text(json.dumps(bench[0].to_json()) + "\n")
    empty = tmp_path / "p0.jsonl"
    empty.write_text("")
    with pytest.raises(FileFormatError):
        read_predictions(empty)
    dup = tmp_path / "p1.jsonl"
    dup.write_text('{"pair_id": "a:q01", "text": "x"}\n{"pair_id": "a:q01", "text": "y"}\n')
    with pytest.raises(FileFormatError, match=":2:"):
        read_predictions(dup)
    good = tmp_path / "p2.jsonl"
    good.write_text('{"pair_id": "a:q01", "text": "grade 1"}\n')
    assert score_run(good, tmp_path / "b.jsonl").closed_accuracy == 1.0
