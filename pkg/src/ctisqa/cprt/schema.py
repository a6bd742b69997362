"""Clinical pathology report template: dimensions, elements, records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import DuplicateKey, EmptyOptions, SchemaError, UnknownDimension
from ..features import fnv1a64, format_checksum

DIMENSIONS = (
    "Histological Features",
    "Lesion Characteristics",
    "Clinical Pathological Features",
    "Subtypes",
    "Staging",
    "Molecular Markers",
)

ASPECT_ABBREV = {
    "Histological Features": "H.F.",
    "Lesion Characteristics": "L.C.",
    "Clinical Pathological Features": "C.P.F.",
    "Subtypes": "Subtypes",
    "Staging": "Staging",
    "Molecular Markers": "M.M.",
}

STATUSES = ("extracted", "verified", "contradicted", "absent")
PRESENT_STATUSES = ("extracted", "verified")


def normalize_answer(text: str) -> str:
    """Case- and punctuation-insensitive form used to compare answers.

    '+' survives so HER2 scores such as "2+" and "3+" stay distinct.
    """
    kept = []
    for ch in text.casefold():
        if ch.isalnum() or ch == "+":
            kept.append(ch)
        elif ch.isspace() or ch in "-_/":
            kept.append(" ")
    return " ".join("".join(kept).split())


@dataclass
class TemplateElement:
    key: str
    dimension: str
    answer_kind: str
    prompt_template: str
    synonyms: list = field(default_factory=list)
    phrase: str = ""
    options: list = field(default_factory=list)
    option_synonyms: dict = field(default_factory=dict)
    negative_option: str | None = None
    pattern: str | None = None
    example_values: list = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.answer_kind == "closed"

    def canonical_option(self, text):
        """The option matching ``text`` up to case and punctuation, else None."""
        if text is None:
            return None
        norm = normalize_answer(text)
        for opt in self.options:
            if normalize_answer(opt) == norm:
                return opt
        return None

    def option_phrases(self, option) -> list:
        phrases = [option.lower()] + [s.lower() for s in self.option_synonyms.get(option, [])]
        return list(dict.fromkeys(phrases))


@dataclass
class CprtSchema:
    name: str
    elements: list
    dimensions: tuple = DIMENSIONS
    version: str = ""
    checksum: str = ""

    def __post_init__(self):
        self._by_key = {e.key: e for e in self.elements}

    @property
    def keys(self) -> list:
        return [e.key for e in self.elements]

    def element(self, key) -> TemplateElement:
        return self._by_key[key]

    def __contains__(self, key) -> bool:
        return key in self._by_key

    def by_dimension(self) -> dict:
        out = {d: [] for d in self.dimensions}
        for e in self.elements:
            out[e.dimension].append(e)
        return out


def _element(raw: dict, dimensions) -> TemplateElement:
    try:
        key = raw["key"]
        dim = raw["dimension"]
    except KeyError as exc:
        raise SchemaError(f"element missing field {exc.args[0]!r}: {raw}") from None
    if dim not in dimensions:
        raise UnknownDimension(f"element {key!r} has unknown dimension {dim!r}")
    kind = raw.get("answer_kind", "closed")
    if kind not in ("closed", "open"):
        raise SchemaError(f"element {key!r}: answer_kind must be 'closed' or 'open'")
    options = list(raw.get("options", []))
    if kind == "closed":
        if len(options) < 2:
            raise EmptyOptions(f"closed element {key!r} needs at least 2 options")
        folded = [o.casefold() for o in options]
        if len(set(folded)) != len(folded):
            raise SchemaError(f"element {key!r} has duplicate options (case-insensitive)")
    template = raw.get("prompt_template", "{report}")
    if template.count("{report}") != 1:
        raise SchemaError(f"element {key!r}: prompt_template must contain {{report}} exactly once")
    option_synonyms = raw.get("option_synonyms", {})
    unknown = set(option_synonyms) - set(options)
    if unknown:
        raise SchemaError(f"element {key!r}: synonyms for unknown options {sorted(unknown)}")
    neg = raw.get("negative_option")
    if neg is not None and neg not in options:
        raise SchemaError(f"element {key!r}: negative_option {neg!r} is not an option")
    return TemplateElement(
        key=key, dimension=dim, answer_kind=kind, prompt_template=template,
        synonyms=[s.lower() for s in raw.get("synonyms", [])],
        phrase=raw.get("phrase", key.replace("_", " ")),
        options=options, option_synonyms=option_synonyms, negative_option=neg,
        pattern=raw.get("pattern"), example_values=list(raw.get("example_values", [])),
    )


def schema_from_dict(raw: dict, checksum: str = "") -> CprtSchema:
    dims = tuple(raw.get("dimensions", DIMENSIONS))
    if set(dims) != set(DIMENSIONS) or len(dims) != len(DIMENSIONS):
        raise UnknownDimension(f"schema dimensions must be exactly {list(DIMENSIONS)}")
    elements = []
    seen = set()
    for item in raw.get("elements", []):
        el = _element(item, dims)
        if el.key in seen:
            raise DuplicateKey(el.key)
        seen.add(el.key)
        elements.append(el)
    if not elements:
        raise SchemaError("schema has no elements")
    return CprtSchema(name=raw.get("name", ""), elements=elements, dimensions=dims,
                      version=str(raw.get("version", "")), checksum=checksum)


def bundled_schema_path():
    return resources.files("ctisqa.cprt") / "data" / "brca_schema.json"


def load_schema(path=None) -> CprtSchema:
    """Load a schema file; the bundled BRCA template when ``path`` is None."""
    blob = (bundled_schema_path().read_bytes() if path is None else Path(path).read_bytes())
    try:
        raw = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"schema file does not parse: {exc}") from None
    return schema_from_dict(raw, checksum=format_checksum(fnv1a64(blob)))


@dataclass
class PathologyReport:
    case_id: str
    slide_ids: list
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError(f"report {self.case_id!r} has empty text")
        if not self.slide_ids:
            self.slide_ids = [self.case_id]

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "slide_ids": list(self.slide_ids), "text": self.text}

    @classmethod
    def from_json(cls, rec: dict):
        return cls(case_id=rec["case_id"], slide_ids=list(rec.get("slide_ids") or []), text=rec["text"])


@dataclass
class ExtractedFeature:
    case_id: str
    key: str
    value: str | None
    status: str
    extractor: str = ""
    span: tuple | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.span is not None:
            self.span = (int(self.span[0]), int(self.span[1]))

    @property
    def present(self) -> bool:
        return self.status in PRESENT_STATUSES

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "key": self.key,
            "value": self.value,
            "status": self.status,
            "provenance": {"extractor": self.extractor,
                           "span": list(self.span) if self.span else None},
        }

    @classmethod
    def from_json(cls, rec: dict):
        prov = rec.get("provenance") or {}
        return cls(case_id=rec["case_id"], key=rec["key"], value=rec.get("value"),
                   status=rec["status"], extractor=prov.get("extractor", ""),
                   span=tuple(prov["span"]) if prov.get("span") else None)


def check_features(features, schema: CprtSchema) -> None:
    """Raise if a feature names an unknown key or an out-of-vocabulary option."""
    for f in features:
        if f.key not in schema:
            raise SchemaError(f"feature key {f.key!r} is not in schema {schema.name!r}")
        el = schema.element(f.key)
        if el.closed and f.status != "absent" and f.value not in el.options:
            raise SchemaError(f"{f.case_id}/{f.key}: value {f.value!r} not among {el.options}")
