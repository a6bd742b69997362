"""Reading and writing report corpora and feature files."""

from __future__ import annotations

from collections import OrderedDict

from ..errors import FileFormatError
from ..io import read_jsonl, write_jsonl
from .schema import ExtractedFeature, PathologyReport


def write_reports(path, reports, header=None) -> None:
    write_jsonl(path, (r.to_json() for r in reports), header)


def read_reports(path) -> list:
    _, recs = read_jsonl(path, required=("case_id", "text"))
    reports, seen = [], set()
    for n, rec in enumerate(recs, start=1):
        if rec["case_id"] in seen:
            raise FileFormatError(path, n, f"duplicate case_id {rec['case_id']!r}")
        seen.add(rec["case_id"])
        try:
            reports.append(PathologyReport.from_json(rec))
        except ValueError as exc:
            raise FileFormatError(path, n, str(exc)) from None
    return reports


def write_feature_file(path, features, header=None) -> None:
    write_jsonl(path, (f.to_json() for f in features), header)


def read_feature_file(path) -> tuple:
    """``(header, features)`` from a features JSON-lines file."""
    header, recs = read_jsonl(path, required=("case_id", "key", "status"))
    out = []
    for n, rec in enumerate(recs, start=1):
        try:
            out.append(ExtractedFeature.from_json(rec))
        except (ValueError, KeyError, TypeError) as exc:
            raise FileFormatError(path, n, f"bad feature record: {exc}") from None
    return header, out


def group_by_case(features) -> "OrderedDict[str, list]":
    groups = OrderedDict()
    for f in features:
        groups.setdefault(f.case_id, []).append(f)
    return groups


def present_values(features) -> dict:
    """``key -> value`` for features that survived validation."""
    return {f.key: f.value for f in features if f.present}
