"""JSON-lines helpers shared by the builders, extractor and CLI.

Output files start with a header record ``{"_header": {...}}``; readers
return it separately and tolerate files without one.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import __version__
from .errors import FileFormatError

HEADER_KEY = "_header"


def make_header(**fields) -> dict:
    return {"tool": "ctisqa", "version": __version__, **fields}


def dumps(record) -> str:
    return json.dumps(record, ensure_ascii=False)


def write_jsonl(path, records, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(dumps({HEADER_KEY: header}) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path, required: tuple = (), with_lines: bool = False):
    """Parse a JSON-lines file into ``(header, records)``.

    Every record must be an object holding the ``required`` fields; problems
    are reported with their 1-based line number. With ``with_lines`` the
    records come back as ``(line_number, record)`` tuples.
    """
    header = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FileFormatError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise FileFormatError(path, lineno, "record is not a JSON object")
            if HEADER_KEY in rec:
                if header is not None or records:
                    raise FileFormatError(path, lineno, "header record must come first")
                header = rec[HEADER_KEY]
                continue
            missing = [k for k in required if k not in rec]
            if missing:
                raise FileFormatError(path, lineno, f"missing field(s) {', '.join(missing)}")
            records.append((lineno, rec) if with_lines else rec)
    return header, records


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
