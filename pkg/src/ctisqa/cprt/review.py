"""Pathologist spot-check round trip as tab-separated review files.

Columns: case_id, key, value, status, verdict. Exported rows have an empty
verdict. Reviewers fill in ``accept`` (status becomes verified), ``reject``
(contradicted), ``absent``, or ``correct`` after editing the value column
(value replaced, status verified). Rows left blank change nothing.
"""

from __future__ import annotations

import csv
import dataclasses

import numpy as np

from ..errors import MalformedReviewFile
from .schema import CprtSchema

COLUMNS = ("case_id", "key", "value", "status", "verdict")
VERDICTS = ("", "accept", "reject", "absent", "correct")


def sample_cases(features, sample_size: int, seed: int) -> list:
    """Uniform sample of case ids without replacement, returned sorted."""
    cases = sorted({f.case_id for f in features})
    n = min(max(sample_size, 0), len(cases))
    if n == 0:
        return []
    picked = np.random.default_rng(seed).choice(len(cases), size=n, replace=False)
    return sorted(cases[i] for i in picked)


def spot_check_export(features, sample_size: int, seed: int, path) -> int:
    """Write every feature of the sampled cases; returns the row count.

    An empty sample produces an empty file.
    """
    chosen = set(sample_cases(features, sample_size, seed))
    rows = [f for f in features if f.case_id in chosen]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if not rows:
            return 0
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(COLUMNS)
        for f in rows:
            w.writerow([f.case_id, f.key, "" if f.value is None else f.value, f.status, ""])
    return len(rows)


def read_review(path) -> list:
    """Parsed rows as ``(line_number, dict)``; raises on any malformed line."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not any(line.strip() for line in lines):
        return []
    header = lines[0].split("\t")
    if tuple(header) != COLUMNS:
        raise MalformedReviewFile(f"{path}:1: expected header {'/'.join(COLUMNS)}")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != len(COLUMNS):
            raise MalformedReviewFile(f"{path}:{n}: expected {len(COLUMNS)} columns, got {len(cells)}")
        row = dict(zip(COLUMNS, cells))
        row["verdict"] = row["verdict"].strip().lower()
        if row["verdict"] not in VERDICTS:
            raise MalformedReviewFile(f"{path}:{n}: unknown verdict {row['verdict']!r}")
        rows.append((n, row))
    return rows


def spot_check_import(features, path, schema: CprtSchema | None = None) -> list:
    """Merge reviewer verdicts into ``features``; untouched rows are no-ops."""
    index = {(f.case_id, f.key): i for i, f in enumerate(features)}
    out = list(features)
    for n, row in read_review(path):
        pos = index.get((row["case_id"], row["key"]))
        if pos is None:
            raise MalformedReviewFile(f"{path}:{n}: no feature {row['case_id']}/{row['key']}")
        f = out[pos]
        verdict = row["verdict"]
        if verdict == "accept":
            if f.status == "absent":
                raise MalformedReviewFile(f"{path}:{n}: cannot accept an absent feature")
            out[pos] = dataclasses.replace(f, status="verified")
        elif verdict == "reject":
            if f.status == "absent":
                raise MalformedReviewFile(f"{path}:{n}: cannot reject an absent feature")
            out[pos] = dataclasses.replace(f, status="contradicted")
        elif verdict == "absent":
            out[pos] = dataclasses.replace(f, value=None, status="absent", span=None)
        elif verdict == "correct":
            value = row["value"].strip()
            if not value:
                raise MalformedReviewFile(f"{path}:{n}: corrected value is empty")
            if schema is not None and f.key in schema:
                el = schema.element(f.key)
                if el.closed:
                    canon = el.canonical_option(value)
                    if canon is None:
                        raise MalformedReviewFile(
                            f"{path}:{n}: {value!r} is not an option of {f.key}")
                    value = canon
            out[pos] = dataclasses.replace(f, value=value, status="verified", extractor="review",
                                           span=None)
    return out
