import json

import httpx
import pytest

from ctisqa.cprt import (ExtractedFeature, OfflineExtractor, PathologyReport, RemoteExtractor,
                         extract, load_schema, normalize_answer, read_feature_file, read_reports,
                         schema_from_dict, self_verify, spot_check_export, spot_check_import,
                         synth_corpus, write_feature_file, write_reports)
from ctisqa.cprt.review import read_review
from ctisqa.errors import (DuplicateKey, EmptyOptions, ExtractorUnreachable, FileFormatError,
                           MalformedExtractorReply, MalformedReviewFile, SchemaError,
                           UnknownDimension)
from ctisqa.remote import API_KEY_ENV

DIMS = ["Histological Features", "Lesion Characteristics", "Clinical Pathological Features",
        "Subtypes", "Staging", "Molecular Markers"]
EXAMPLE = "Nottingham grade II invasive ductal carcinoma, ER positive"


def minimal(**over):
    el = {"key": "er_status", "dimension": "Molecular Markers", "options": ["Positive", "Negative"],
          "synonyms": ["er"]}
    el.update(over)
    return {"dimensions": DIMS, "elements": [el]}


def test_bundled_schema(schema):
    assert len(schema.dimensions) == 6
    assert len(schema.elements) == 38
    assert all(schema.by_dimension()[d] for d in schema.dimensions)
    assert schema.checksum == load_schema().checksum


def test_minimal_and_bad_schemas():
    s = schema_from_dict(minimal())
    assert s.keys == ["er_status"]
    raw = minimal()
    raw["elements"].append(dict(raw["elements"][0]))
    with pytest.raises(DuplicateKey, match="er_status"):
        schema_from_dict(raw)
    with pytest.raises(EmptyOptions):
        schema_from_dict(minimal(options=["Positive"]))
    with pytest.raises(UnknownDimension):
        schema_from_dict(minimal(dimension="Imaging"))
    with pytest.raises(SchemaError):
        schema_from_dict(minimal(options=["Positive", "positive"]))
    with pytest.raises(SchemaError):
        schema_from_dict(minimal(prompt_template="no placeholder"))


def test_example_sentence(schema):
    report = PathologyReport("c1", ["c1-s1"], EXAMPLE)
    feats = {f.key: f for f in extract(report, schema, OfflineExtractor(schema))}
    assert len(feats) == 38
    assert feats["histologic_grade"].value == "Grade 2"
    assert feats["er_status"].value == "Positive"
    assert feats["her2_status"].status == "absent"
    for f in feats.values():
        if f.span is not None:
            piece = EXAMPLE.lower()[f.span[0]:f.span[1]]
            el = schema.element(f.key)
            assert any(s in piece for s in el.synonyms + [p for o in el.options
                                                           for p in el.option_phrases(o)])


def test_no_synonyms_means_absent():
    s = schema_from_dict(minimal(synonyms=[]))
    rep = PathologyReport("c", [], "ER positive. Estrogen receptor positive.")
    assert extract(rep, s, OfflineExtractor(s))[0].status == "absent"


def test_verification_rules(schema):
    ex = OfflineExtractor(schema)
    report = PathologyReport("c1", [], EXAMPLE)
    feats = self_verify(extract(report, schema, ex), report, schema, ex)
    by = {f.key: f for f in feats}
    assert by["er_status"].status == "verified"
    assert by["her2_status"].status == "absent"
    assert self_verify(feats, report, schema, ex) == feats
    neg = PathologyReport("c2", [], "Estrogen receptor: negative.")
    claim = [ExtractedFeature("c2", "er_status", "Positive", "extracted")]
    assert self_verify(claim, neg, schema, ex)[0].status == "contradicted"
    negated = PathologyReport("c3", [], "No lymphovascular invasion identified.")
    f = {x.key: x for x in extract(negated, schema, ex)}["lymphovascular_invasion"]
    assert f.value == "Absent"
    with pytest.raises(ValueError):
        self_verify(claim, report, schema, ex)


def test_synthetic_reports_are_recovered(schema):
    ex = OfflineExtractor(schema)
    for case in synth_corpus(schema, seed=3, n_cases=40):
        feats = self_verify(extract(case.report, schema, ex), case.report, schema, ex)
        got = {f.key: f.value for f in feats if f.present}
        assert got == case.gold
        assert all(f.status != "contradicted" for f in feats)


def _mock(replies, status=200, seen=None):
    it = iter(replies)

    def handler(request):
        if seen is not None:
            seen.append(request)
        if status != 200:
            return httpx.Response(status, json={"error": "x"})
        content = next(it)
        body = {"choices": [{"message": {"content": content}}]} if content is not None else {}
        return httpx.Response(200, json=body)
    return httpx.MockTransport(handler)


def test_remote_extractor_contract(schema, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sekret")
    seen = []
    ex = RemoteExtractor("http://x/v1/chat", "m", transport=_mock(["  grade 2 ", "Poorly", "NOT FOUND"], seen=seen))
    el = schema.element("histologic_grade")
    assert ex.extract_element("r", el) == ("Grade 2", None)
    assert ex.extract_element("r", el) == (None, None)
    assert ex.extract_element("r", el) == (None, None)
    body = json.loads(seen[0].content)
    assert body["model"] == "m" and body["temperature"] == 0
    assert body["messages"][0]["content"].endswith("\nr")
    assert seen[0].headers["authorization"] == "Bearer sekret"


def test_remote_extractor_errors(schema):
    el = schema.element("er_status")
    with pytest.raises(ExtractorUnreachable):
        RemoteExtractor("http://x", "m", transport=_mock([], status=503)).extract_element("r", el)
    with pytest.raises(MalformedExtractorReply):
        RemoteExtractor("http://x", "m", transport=_mock([None])).extract_element("r", el)
    ex = RemoteExtractor("http://x", "m", transport=_mock(["SUPPORTED", "contradicted.", "maybe"]))
    assert ex.verify_element("r", el, "Positive") is True
    assert ex.verify_element("r", el, "Positive") is False
    with pytest.raises(MalformedExtractorReply):
        ex.verify_element("r", el, "Positive")


def test_normalize_answer():
    assert normalize_answer(" HER2-Positive ") == normalize_answer("her2 positive")
    assert normalize_answer("3+") == "3+"


def _features(schema):
    ex = OfflineExtractor(schema)
    out = []
    for case in synth_corpus(schema, seed=1, n_cases=6):
        out += self_verify(extract(case.report, schema, ex), case.report, schema, ex)
    return out


def test_review_round_trip(tmp_path, schema):
    feats = _features(schema)
    empty = tmp_path / "none.tsv"
    assert spot_check_export(feats, 0, 0, empty) == 0
    assert empty.read_bytes() == b""
    path = tmp_path / "r.tsv"
    n = spot_check_export(feats, 2, 0, path)
    assert n == 2 * 38
    assert spot_check_import(feats, path, schema) == feats
    lines = path.read_text().splitlines()
    target = next(i for i, line in enumerate(lines) if "\tverified\t" in line)
    cells = lines[target].split("\t")
    cells[-1] = "reject"
    lines[target] = "\t".join(cells)
    path.write_text("\n".join(lines) + "\n")
    out = spot_check_import(feats, path, schema)
    changed = [(a, b) for a, b in zip(feats, out) if a != b]
    assert len(changed) == 1
    assert changed[0][1].status == "contradicted" and changed[0][1].key == cells[1]


def test_malformed_review(tmp_path, schema):
    feats = _features(schema)
    path = tmp_path / "r.tsv"
    spot_check_export(feats, 1, 0, path)
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[:2] + ["too\tfew"]) + "\n")
    with pytest.raises(MalformedReviewFile, match=":3:"):
        read_review(path)
    cells = text[1].split("\t")
    cells[-1] = "maybe"
    path.write_text("\n".join([text[0], "\t".join(cells)]) + "\n")
    with pytest.raises(MalformedReviewFile, match="verdict"):
        read_review(path)


def test_corpus_files(tmp_path, schema):
    cases = synth_corpus(schema, seed=2, n_cases=3, multi_slide_rate=1.0)
    write_reports(tmp_path / "r.jsonl", [c.report for c in cases], {"seed": 2})
    back = read_reports(tmp_path / "r.jsonl")
    assert [r.slide_ids for r in back] == [c.report.slide_ids for c in cases]
    feats = _features(schema)
    write_feature_file(tmp_path / "f.jsonl", feats)
    assert read_feature_file(tmp_path / "f.jsonl")[1] == feats
    (tmp_path / "bad.jsonl").write_text('{"case_id": "a", "text": "x"}\n{"case_id": "a", "text": "y"}\n')
    with pytest.raises(FileFormatError):
        read_reports(tmp_path / "bad.jsonl")
