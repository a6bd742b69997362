"""Feature extractors and the two-stage (automatic) validation.

Two interchangeable implementations share the ``Extractor`` protocol:

``OfflineExtractor``
    Deterministic keyword reader. For each element it finds occurrences of
    the element's key synonyms, then reads the value inside the same clause:
    a negation cue right before the key yields the element's negative option,
    otherwise the option phrase nearest to the key wins (open elements use the
    element's regex after the key). Key occurrences that sit inside a longer
    key of another element ("necrosis" inside "comedo necrosis") are ignored.

``RemoteExtractor``
    Minimal chat-completion client: ``POST {endpoint}`` with
    ``{"model", "messages": [{"role": "user", "content": prompt}],
    "temperature": 0}`` and reads ``choices[0].message.content`` (see
    ``ctisqa.remote``). "NOT FOUND" means absent; closed replies that match
    no option up to case and punctuation are treated as absent too.
"""

from __future__ import annotations

import dataclasses
import re
from functools import lru_cache
from typing import Protocol

from ..errors import MalformedExtractorReply
from ..remote import ChatClient
from .schema import CprtSchema, ExtractedFeature, PathologyReport, TemplateElement

VERIFY_WINDOW = 120
NOT_FOUND = "not found"

_CLAUSE_BREAK = re.compile(r"[;\n,]|\.(?=\s|$)")
_NEGATION = re.compile(
    r"(?<![a-z0-9])(no|negative for|absence of|absent|without)\s+(?:[a-z0-9/+-]+\s+){0,2}$")


class Extractor(Protocol):
    name: str

    def extract_element(self, text: str, element: TemplateElement):
        """Return ``(value, span)``; ``value`` None when not determinable."""

    def verify_element(self, text: str, element: TemplateElement, value: str) -> bool:
        """True when the report supports ``value`` for this element."""


@lru_cache(maxsize=4096)
def phrase_regex(phrase: str) -> re.Pattern:
    return re.compile(r"(?<![a-z0-9])" + re.escape(phrase.lower()) + r"(?![a-z0-9])")


def lower_text(text: str) -> str:
    """Lowercase without changing string length, so offsets stay valid."""
    low = text.lower()
    if len(low) == len(text):
        return low
    return "".join(c.lower() if len(c.lower()) == 1 else c for c in text)


def clause_bounds(low: str, start: int, end: int) -> tuple[int, int]:
    lo = 0
    for m in _CLAUSE_BREAK.finditer(low, 0, start):
        lo = m.end()
    m = _CLAUSE_BREAK.search(low, end)
    return lo, (m.start() if m else len(low))


def find_phrases(low: str, phrases, lo: int = 0, hi: int | None = None) -> list:
    """All ``(start, end, phrase)`` matches of ``phrases`` in ``low[lo:hi]``."""
    hi = len(low) if hi is None else hi
    out = []
    for p in phrases:
        for m in phrase_regex(p).finditer(low, lo, hi):
            out.append((m.start(), m.end(), p))
    return out


class _ReportIndex:
    """Key occurrences of every element in one report, computed once."""

    def __init__(self, text: str, elements):
        self.text = text
        self.low = lower_text(text)
        raw = {}
        for el in elements:
            spans = sorted({(s, e) for s, e, _ in find_phrases(self.low, el.synonyms)},
                           key=lambda t: (t[0], -(t[1] - t[0])))
            kept = []
            for s, e in spans:
                # overlapping synonyms of the same element: keep the first, longest
                if kept and s < kept[-1][1]:
                    continue
                kept.append((s, e))
            raw[el.key] = kept
        self._raw = raw

    def occurrences(self, key: str) -> list:
        out = []
        for s, e in self._raw.get(key, []):
            shadowed = any(
                s2 <= s and e <= e2 and (e2 - s2) > (e - s)
                for other, spans in self._raw.items() if other != key
                for s2, e2 in spans
            )
            if not shadowed:
                out.append((s, e))
        return out


def _read_closed(low, el: TemplateElement, occ):
    s, e = occ
    lo, hi = clause_bounds(low, s, e)
    if el.negative_option is not None:
        m = _NEGATION.search(low, lo, s)
        if m is not None:
            return el.negative_option, (m.start(1), e)
    best = None
    for opt in el.options:
        for ms, me, _ in find_phrases(low, el.option_phrases(opt), lo, hi):
            if s <= ms and me <= e:
                continue  # the option text is part of the key itself
            if me <= s:
                dist, after = s - me, 1
            elif ms >= e:
                dist, after = ms - e, 0
            else:
                dist, after = 0, 0
            cand = (dist, after, -(me - ms), ms, opt, me)
            if best is None or cand < best:
                best = cand
    if best is None:
        return None, None
    ms, opt, me = best[3], best[4], best[5]
    return opt, (min(s, ms), max(e, me))


def _read_open(text, low, el: TemplateElement, occ):
    if not el.pattern:
        return None, None
    s, e = occ
    _, hi = clause_bounds(low, s, e)
    m = re.compile(el.pattern).search(low, e, hi)
    if m is None:
        return None, None
    g = 1 if m.re.groups else 0
    vs, ve = m.span(g)
    return text[vs:ve], (s, ve)


def _reading(index: _ReportIndex, el: TemplateElement, occ):
    if el.closed:
        return _read_closed(index.low, el, occ)
    return _read_open(index.text, index.low, el, occ)


class OfflineExtractor:
    name = "offline-keyword"

    def __init__(self, schema: CprtSchema | None = None, window: int = VERIFY_WINDOW):
        self.schema = schema
        self.window = window
        self._cache = (None, None)

    def _index(self, text, element):
        if self.schema is None:
            return _ReportIndex(text, [element])
        cached_text, idx = self._cache
        if cached_text is not text or idx is None:
            idx = _ReportIndex(text, self.schema.elements)
            self._cache = (text, idx)
        return idx

    def extract_element(self, text, element):
        idx = self._index(text, element)
        for occ in idx.occurrences(element.key):
            value, span = _reading(idx, element, occ)
            if value is not None:
                return value, span
        return None, None

    def _value_phrases(self, element, value):
        if element.closed:
            return element.option_phrases(value)
        return [value.lower()]

    def verify_element(self, text, element, value):
        idx = self._index(text, element)
        occs = idx.occurrences(element.key)
        if not occs:
            return False
        supported = False
        phrases = self._value_phrases(element, value)
        for occ in occs:
            read, _ = _reading(idx, element, occ)
            if read is not None and read.casefold() != value.casefold():
                return False
            lo = max(0, occ[0] - self.window)
            hi = min(len(idx.low), occ[1] + self.window)
            if read is not None or find_phrases(idx.low, phrases, lo, hi):
                supported = True
        return supported


def _clean_reply(content: str) -> str:
    out = content.strip().strip("`").strip()
    if out.lower().startswith("answer:"):
        out = out[len("answer:"):].strip()
    return out.strip("\"'").strip()


class RemoteExtractor:
    name = "remote"

    def __init__(self, endpoint: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, transport=None):
        self.client = ChatClient(endpoint, model, api_key, timeout, transport)

    def complete(self, prompt: str) -> str:
        return self.client.complete(prompt)

    def extract_element(self, text, element):
        reply = _clean_reply(self.complete(element.prompt_template.replace("{report}", text)))
        if not reply or reply.casefold().rstrip(".") == NOT_FOUND:
            return None, None
        if element.closed:
            return element.canonical_option(reply), None
        return reply, None

    def verify_element(self, text, element, value):
        prompt = (
            "Check a value extracted from the pathology report below.\n"
            f"Claim: {element.phrase} is {value}.\n"
            "Reply with exactly SUPPORTED or CONTRADICTED.\n\nReport:\n" + text
        )
        raw = self.complete(prompt)
        reply = _clean_reply(raw).casefold()
        if reply.startswith("supported"):
            return True
        if reply.startswith("contradicted"):
            return False
        raise MalformedExtractorReply("verification reply is neither SUPPORTED nor CONTRADICTED", raw)

    def close(self):
        self.client.close()


def extract(report: PathologyReport, schema: CprtSchema, extractor: Extractor) -> list:
    """One feature per schema element, in schema order."""
    feats = []
    for el in schema.elements:
        value, span = extractor.extract_element(report.text, el)
        if value is None:
            feats.append(ExtractedFeature(report.case_id, el.key, None, "absent", extractor.name))
        else:
            feats.append(ExtractedFeature(report.case_id, el.key, value, "extracted",
                                          extractor.name, span))
    return feats


def self_verify(features, report: PathologyReport, schema: CprtSchema, extractor: Extractor) -> list:
    """Re-check every present pair against the report text.

    Contradicted pairs are kept with ``status="contradicted"``; absent pairs
    pass through untouched. Applying this twice gives the same result.
    """
    out = []
    for f in features:
        if f.case_id != report.case_id:
            raise ValueError(f"feature for {f.case_id!r} checked against report {report.case_id!r}")
        if f.status == "absent":
            out.append(f)
            continue
        ok = extractor.verify_element(report.text, schema.element(f.key), f.value)
        out.append(dataclasses.replace(f, status="verified" if ok else "contradicted"))
    return out
