"""Align descriptions, Bench question-answer pairs, slide splits and statistics.

Only features whose status is ``extracted`` or ``verified`` feed the
builders; contradicted and absent pairs are kept in the feature files but
never turned into training or evaluation text.
"""

from __future__ import annotations

import json
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .cprt.corpus import group_by_case
from .cprt.schema import CprtSchema, normalize_answer
from .errors import InfeasibleTargets, QuestionBankMismatch, RealizerFailure, SchemaError
from .features import fnv1a64

MIN_KEYS, MAX_KEYS = 3, 5
SPLITS = ("train", "val", "test")
DEFAULT_TARGETS = (804, 87, 86)
ABSENT = "<absent>"


# question bank ---------------------------------------------------------------

@dataclass(frozen=True)
class Question:
    question_id: str
    key: str
    aspect: str
    answer_kind: str
    text: str


def load_question_bank(path=None) -> list:
    if path is None:
        blob = (resources.files("ctisqa") / "data" / "question_bank.json").read_text(encoding="utf-8")
    else:
        blob = Path(path).read_text(encoding="utf-8")
    raw = json.loads(blob)
    items = raw["questions"] if isinstance(raw, dict) else raw
    bank = [Question(**{k: q[k] for k in ("question_id", "key", "aspect", "answer_kind", "text")})
            for q in items]
    ids = [q.question_id for q in bank]
    if len(set(ids)) != len(ids):
        raise QuestionBankMismatch("question ids are not unique")
    return bank


def check_question_bank(bank, schema: CprtSchema) -> None:
    for q in bank:
        if q.key not in schema:
            raise QuestionBankMismatch(f"{q.question_id}: key {q.key!r} is not in the schema")
        el = schema.element(q.key)
        if q.aspect != el.dimension:
            raise QuestionBankMismatch(
                f"{q.question_id}: aspect {q.aspect!r} but {q.key} belongs to {el.dimension!r}")
        if q.answer_kind != el.answer_kind:
            raise QuestionBankMismatch(
                f"{q.question_id}: answer_kind {q.answer_kind!r} but {q.key} is {el.answer_kind!r}")


# align -----------------------------------------------------------------------

@dataclass
class AlignSample:
    case_id: str
    sample_index: int
    feature_keys: list
    description: str
    seed_trace: int

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "sample_index": self.sample_index,
                "feature_keys": list(self.feature_keys), "description": self.description,
                "seed_trace": self.seed_trace}


@dataclass
class AlignResult:
    samples: list
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)


class TemplateRealizer:
    """Offline realizer: one fragment per feature, joined with semicolons."""

    name = "template"
    FRAGMENTS = (
        "the tumor shows {value} {phrase}",
        "{phrase} is {value}",
        "{value} is reported for {phrase}",
    )

    def realize(self, items, rng) -> str:
        parts = []
        for el, value in items:
            tpl = self.FRAGMENTS[int(rng.integers(len(self.FRAGMENTS)))]
            parts.append(tpl.format(value=value, phrase=el.phrase))
        text = "; ".join(parts) + "."
        return text[0].upper() + text[1:]


class RemoteRealizer:
    """Fluent prose from a chat-completion endpoint; every value must appear."""

    name = "remote"

    def __init__(self, client):
        self.client = client

    def realize(self, items, rng) -> str:
        facts = "\n".join(f"- {el.phrase}: {value}" for el, value in items)
        prompt = ("Write two or three sentences describing a breast cancer whole slide image "
                  "as a pathologist would. Mention every finding below with its value "
                  "written exactly as given.\n" + facts)
        text = self.client.complete(prompt).strip()
        low = text.casefold()
        missing = [v for _, v in items if v.casefold() not in low]
        if missing:
            raise RealizerFailure(f"description omits value(s) {missing}")
        return text


def case_seed(seed: int, case_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & (2**64 - 1), fnv1a64(case_id.encode("utf-8"))])


def _seed_trace(ss: np.random.SeedSequence) -> int:
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def build_align(features, schema: CprtSchema, realizer, seed: int,
                samples_per_case: int = 100) -> AlignResult:
    """``samples_per_case`` descriptions per case with at least three features.

    Each sample draws its feature count uniformly from {3, 4, 5} (capped by
    what the case has) and that many keys without replacement. A realizer
    failure is retried once with the same draw, then recorded in ``failed``.
    """
    if samples_per_case < 0:
        raise ValueError("samples_per_case must be >= 0")
    result = AlignResult(samples=[])
    for case_id, feats in group_by_case(features).items():
        present = [f for f in feats if f.present and f.key in schema]
        if len(present) < MIN_KEYS:
            result.skipped.append({"case_id": case_id, "n_features": len(present),
                                   "reason": f"fewer than {MIN_KEYS} usable features"})
            continue
        present.sort(key=lambda f: schema.keys.index(f.key))
        children = case_seed(seed, case_id).spawn(samples_per_case)
        for j, ss in enumerate(children):
            rng = np.random.default_rng(ss)
            k = int(rng.integers(MIN_KEYS, min(MAX_KEYS, len(present)) + 1))
            picked = [present[i] for i in rng.choice(len(present), size=k, replace=False)]
            items = [(schema.element(f.key), f.value) for f in picked]
            text, reason = None, None
            for _attempt in range(2):
                try:
                    text = realizer.realize(items, rng)
                    break
                except RealizerFailure as exc:
                    reason = str(exc)
            if text is None:
                result.failed.append({"case_id": case_id, "sample_index": j, "reason": reason})
                continue
            result.samples.append(AlignSample(case_id, j, [f.key for f in picked], text,
                                              _seed_trace(ss)))
    return result


# bench -----------------------------------------------------------------------

@dataclass
class QaPair:
    pair_id: str
    slide_id: str
    question_id: str
    aspect: str
    question_text: str
    answer_kind: str
    answer: str
    options: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"pair_id": self.pair_id, "slide_id": self.slide_id,
                "question_id": self.question_id, "aspect": self.aspect,
                "question_text": self.question_text, "answer_kind": self.answer_kind,
                "options": list(self.options), "answer": self.answer}

    @classmethod
    def from_json(cls, rec: dict):
        return cls(pair_id=rec["pair_id"], slide_id=rec["slide_id"],
                   question_id=rec["question_id"], aspect=rec["aspect"],
                   question_text=rec.get("question_text", ""), answer_kind=rec["answer_kind"],
                   answer=rec["answer"], options=list(rec.get("options") or []))


def build_bench(features, bank, schema: CprtSchema, slide_map: dict | None = None) -> list:
    """One pair per (slide, question) whose feature survived validation.

    ``slide_map`` maps case ids to slide ids; a case without an entry is
    treated as a single slide named after the case.
    """
    check_question_bank(bank, schema)
    slide_map = slide_map or {}
    pairs = []
    for case_id, feats in group_by_case(features).items():
        values = {f.key: f.value for f in feats if f.present}
        for slide_id in slide_map.get(case_id) or [case_id]:
            for q in bank:
                if q.key not in values:
                    continue
                el = schema.element(q.key)
                answer = values[q.key]
                if el.closed and answer not in el.options:
                    raise SchemaError(f"{case_id}/{q.key}: answer {answer!r} not among options")
                pairs.append(QaPair(f"{slide_id}:{q.question_id}", slide_id, q.question_id,
                                    q.aspect, q.text, q.answer_kind, answer,
                                    list(el.options) if el.closed else []))
    return pairs


# split -----------------------------------------------------------------------

@dataclass
class SplitAssignment:
    assignment: dict
    targets: tuple
    divergence: dict
    objective_initial: float
    objective: float
    ceiling: float | None = None

    @property
    def max_divergence(self) -> float:
        return max((max(v.values()) for v in self.divergence.values()), default=0.0)

    @property
    def best_effort(self) -> bool:
        return self.ceiling is not None and self.max_divergence > self.ceiling

    def slides(self, split: str) -> list:
        return sorted(s for s, v in self.assignment.items() if v == split)

    def counts(self) -> dict:
        c = Counter(self.assignment.values())
        return {s: c.get(s, 0) for s in SPLITS}

    def to_json(self) -> dict:
        return {"targets": dict(zip(SPLITS, self.targets)), "counts": self.counts(),
                "objective_initial": self.objective_initial, "objective": self.objective,
                "max_divergence": self.max_divergence, "ceiling": self.ceiling,
                "best_effort": self.best_effort, "divergence": self.divergence,
                "assignment": dict(sorted(self.assignment.items()))}


def scale_targets(targets, total: int) -> tuple:
    """Largest-remainder rescaling of ``targets`` to sum to ``total``."""
    t = np.asarray(targets, dtype=np.float64)
    raw = t / t.sum() * total
    out = np.floor(raw).astype(np.int64)
    for i in np.argsort(-(raw - out), kind="stable")[: total - int(out.sum())]:
        out[i] += 1
    return tuple(int(v) for v in out)


class _Balance:
    """Incremental total-variation objective over one-hot feature blocks."""

    def __init__(self, onehot, weights, blocks, labels, sizes):
        self.u = onehot * weights[:, None]          # per-unit slide-weighted counts
        self.blocks = blocks
        self.labels = labels
        self.n = np.array([weights[labels == s].sum() for s in range(3)], dtype=np.float64)
        self.glob = self.u.sum(axis=0) / weights.sum()
        self.C = np.stack([self.u[labels == s].sum(axis=0) for s in range(3)])
        self.sizes = sizes

    def tv_rows(self, counts, s):
        """Summed per-feature TV of count rows for split ``s``."""
        if self.n[s] == 0:
            return np.zeros(counts.shape[:-1])
        return 0.5 * np.abs(counts / self.n[s] - self.glob).sum(axis=-1)

    def split_cost(self, s):
        return float(self.tv_rows(self.C[s], s))

    def total(self):
        return sum(self.split_cost(s) for s in range(3))

    def per_feature(self, s):
        d = np.abs(self.C[s] / max(self.n[s], 1e-300) - self.glob)
        return [0.5 * float(d[a:b].sum()) for a, b in self.blocks]


def _unit_table(features, slide_map, schema: CprtSchema):
    by_case = group_by_case(features)
    cases = list(slide_map) if slide_map else list(by_case)
    closed = [el for el in schema.elements if el.closed]
    cols, blocks = {}, []
    for el in closed:
        start = len(cols)
        for v in [ABSENT] + list(el.options):
            cols[(el.key, v)] = len(cols)
        blocks.append((start, len(cols)))
    onehot = np.zeros((len(cases), len(cols)))
    values = []
    for i, cid in enumerate(cases):
        vals = {f.key: f.value for f in by_case.get(cid, []) if f.present}
        values.append(vals)
        for el in closed:
            v = vals.get(el.key)
            onehot[i, cols[(el.key, v if v in el.options else ABSENT)]] = 1.0
    slides = [list(slide_map.get(c) or [c]) if slide_map else [c] for c in cases]
    return cases, slides, values, onehot, blocks, [el.key for el in closed]


def split_slides(features, slide_map: dict | None = None, targets=DEFAULT_TARGETS, seed: int = 0,
                 primary_key: str = "histologic_type", schema: CprtSchema | None = None,
                 scale: bool = False, ceiling: float | None = None,
                 max_passes: int = 8) -> SplitAssignment:
    """Case-grouped, stratified train/val/test split with TV balancing.

    Cases (all their slides together) are dealt to splits stratum by stratum
    on ``primary_key``, then equal-size case swaps between splits are applied
    while they lower the summed total-variation distance between each split's
    closed-feature distributions and the global one (absence counts as a
    category).
    """
    if schema is None:
        from .cprt.schema import load_schema
        schema = load_schema()
    cases, slides, values, onehot, blocks, feat_keys = _unit_table(features, slide_map, schema)
    sizes = np.array([len(s) for s in slides], dtype=np.int64)
    total = int(sizes.sum())
    targets = tuple(int(t) for t in targets)
    if len(targets) != 3 or min(targets) < 0:
        raise InfeasibleTargets(f"targets must be three non-negative counts, got {targets}")
    if sum(targets) != total:
        if not scale:
            raise InfeasibleTargets(
                f"targets sum to {sum(targets)} but the corpus has {total} slides")
        targets = scale_targets(targets, total)

    rng = np.random.default_rng(seed)
    strata = [values[i].get(primary_key, ABSENT) for i in range(len(cases))]
    stratum_names = sorted(set(strata))
    stratum_of = np.array([stratum_names.index(s) for s in strata])
    stratum_total = np.bincount(stratum_of, weights=sizes, minlength=len(stratum_names))
    frac = np.asarray(targets, dtype=np.float64) / max(total, 1)

    # big units first so the exact slide counts stay reachable
    order = np.lexsort((rng.permutation(len(cases)), stratum_of, -sizes))
    cap = np.asarray(targets, dtype=np.int64).copy()
    got = np.zeros((len(stratum_names), 3))
    labels = np.full(len(cases), -1, dtype=np.int64)
    for i in order:
        st = stratum_of[i]
        ok = np.flatnonzero(cap >= sizes[i])
        if ok.size == 0:
            raise InfeasibleTargets(
                f"cannot place case {cases[i]} ({sizes[i]} slides); remaining capacity {cap.tolist()}")
        need = frac[ok] * stratum_total[st] - got[st, ok]
        j = ok[np.lexsort((-cap[ok], -need))[0]]
        labels[i] = j
        cap[j] -= sizes[i]
        got[st, j] += sizes[i]

    bal = _Balance(onehot, sizes.astype(np.float64), blocks, labels, sizes)
    initial = bal.total()
    for _ in range(max_passes):
        improved = False
        for a in rng.permutation(len(cases)):
            sa = labels[a]
            cost_a = bal.split_cost(sa)
            best_gain, best_b = 1e-12, -1
            for sb in range(3):
                if sb == sa:
                    continue
                cand = np.flatnonzero((labels == sb) & (sizes == sizes[a]))
                if cand.size == 0:
                    continue
                delta = bal.u[cand] - bal.u[a]               # change for split sa
                new_a = bal.tv_rows(bal.C[sa] + delta, sa)
                new_b = bal.tv_rows(bal.C[sb] - delta, sb)
                gain = cost_a + bal.split_cost(sb) - new_a - new_b
                k = int(np.argmax(gain))
                if gain[k] > best_gain:
                    best_gain, best_b = float(gain[k]), int(cand[k])
            if best_b >= 0:
                sb = labels[best_b]
                delta = bal.u[best_b] - bal.u[a]
                bal.C[sa] += delta
                bal.C[sb] -= delta
                labels[a], labels[best_b] = sb, sa
                improved = True
        if not improved:
            break

    divergence = {}
    per_split = [bal.per_feature(s) for s in range(3)]
    for fi, key in enumerate(feat_keys):
        divergence[key] = {SPLITS[s]: round(per_split[s][fi], 12) for s in range(3)
                           if bal.n[s] > 0}
    assignment = {}
    for i, sl in enumerate(slides):
        for sid in sl:
            if sid in assignment:
                raise InfeasibleTargets(f"slide {sid} belongs to more than one case")
            assignment[sid] = SPLITS[labels[i]]
    return SplitAssignment(assignment, targets, divergence, initial, bal.total(), ceiling)


# stats -----------------------------------------------------------------------

def dataset_stats(records, n_slides: int | None = None) -> dict:
    """Counts for Bench pairs or Align samples (dicts or dataclasses)."""
    recs = [r.to_json() if hasattr(r, "to_json") else dict(r) for r in records]
    if not recs:
        raise ValueError("dataset_stats needs at least one record")
    if "pair_id" in recs[0]:
        per_aspect = Counter(r["aspect"] for r in recs)
        kinds = Counter(r["answer_kind"] for r in recs)
        hist = OrderedDict()
        for r in sorted(recs, key=lambda r: r["question_id"]):
            hist.setdefault(r["question_id"], Counter())[r["answer"]] += 1
        slides = n_slides if n_slides is not None else len({r["slide_id"] for r in recs})
        return {
            "kind": "bench",
            "total": len(recs),
            "per_aspect": dict(sorted(per_aspect.items())),
            "closed": kinds.get("closed", 0),
            "open": kinds.get("open", 0),
            "open_ratio": kinds.get("open", 0) / len(recs),
            "n_slides": slides,
            "mean_pairs_per_slide": len(recs) / slides if slides else 0.0,
            "per_question_answers": {q: dict(sorted(c.items())) for q, c in hist.items()},
        }
    n_keys = Counter(len(r["feature_keys"]) for r in recs)
    keys = Counter(k for r in recs for k in r["feature_keys"])
    cases = {r["case_id"] for r in recs}
    return {
        "kind": "align",
        "total": len(recs),
        "n_cases": len(cases),
        "samples_per_case": len(recs) / len(cases),
        "keys_per_sample": {str(k): v for k, v in sorted(n_keys.items())},
        "key_counts": dict(sorted(keys.items())),
    }


def canonical_answer(pair: QaPair, text: str):
    """Prediction mapped onto the option list, or None when it matches none."""
    norm = normalize_answer(text)
    for opt in pair.options:
        if normalize_answer(opt) == norm:
            return opt
    return None
