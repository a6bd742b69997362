"""Synthetic breast pathology reports with known ground truth.

Each element is present independently with its own probability. The default
rates average 15.2 present keys over the 20 bench questions and 22.96 over
all 38 template elements. Every present element is written as its own sentence so that the offline extractor
recovers the gold value exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import CprtSchema, PathologyReport, TemplateElement

PRESENCE = {
    # bench-question elements (mean 0.76)
    "histologic_grade": 0.95, "tubule_formation": 0.62, "nuclear_pleomorphism": 0.62,
    "mitotic_rate": 0.62, "dcis_presence": 0.90, "dcis_nuclear_grade": 0.60,
    "lcis_presence": 0.70, "lymphovascular_invasion": 0.85, "lymph_node_status": 0.90,
    "margin_status": 0.92, "tumor_focality": 0.60, "histologic_type": 0.98,
    "molecular_subtype": 0.45, "pathologic_t_stage": 0.88, "pathologic_n_stage": 0.86,
    "overall_stage": 0.55, "er_status": 0.93, "pr_status": 0.92, "her2_status": 0.90,
    "her2_ihc_score": 0.45,
    # remaining template elements
    "tumor_necrosis": 0.35, "microcalcifications": 0.55, "tumor_infiltrating_lymphocytes": 0.15,
    "dcis_architecture": 0.50, "dcis_comedo_necrosis": 0.45, "atypical_ductal_hyperplasia": 0.20,
    "perineural_invasion": 0.30, "closest_margin_distance": 0.60, "lymph_nodes_examined": 0.80,
    "lymph_nodes_positive": 0.55, "extranodal_extension": 0.35, "tumor_size": 0.70,
    "skin_involvement": 0.30, "tumor_laterality": 0.50, "surgical_procedure": 0.55,
    "lobular_variant": 0.10, "pathologic_m_stage": 0.40, "ki67_index": 0.41,
}

OPTION_WEIGHTS = {
    "histologic_type": [0.72, 0.15, 0.06, 0.04, 0.02, 0.01],
    "histologic_grade": [0.20, 0.45, 0.35],
    "er_status": [0.78, 0.22],
    "pr_status": [0.68, 0.32],
    "her2_status": [0.15, 0.70, 0.15],
    "lymphovascular_invasion": [0.30, 0.70],
    "lymph_node_status": [0.55, 0.45],
    "margin_status": [0.90, 0.10],
}

STAGING_KEYS = ("pathologic_t_stage", "pathologic_n_stage", "pathologic_m_stage")

FILLERS = (
    "The specimen is received fresh and labeled with the patient name.",
    "Sections are submitted in cassettes A1 through A8.",
    "Slides were reviewed by a second pathologist.",
    "Clinical history: palpable mass on screening.",
    "The fibrofatty tissue is serially sectioned.",
    "Ink is applied to the outer surface.",
    "Results were communicated to the treating team.",
)


@dataclass
class SyntheticCase:
    report: PathologyReport
    gold: dict


ACRONYMS = {"dcis", "lcis", "her2", "her-2", "her2/neu", "ihc", "adh", "lvi", "pni", "tils",
            "er", "pr", "pgr", "ajcc", "erbb2", "sbr", "mib-1"}


def _display(phrase: str) -> str:
    words = [w.upper() if w in ACRONYMS else w for w in phrase.split(" ")]
    text = " ".join(words)
    return text[0].upper() + text[1:]


def _draw_value(el: TemplateElement, rng) -> str:
    if el.closed:
        w = OPTION_WEIGHTS.get(el.key)
        p = None if w is None else np.asarray(w) / np.sum(w)
        return el.options[int(rng.choice(len(el.options), p=p))]
    return str(el.example_values[int(rng.integers(len(el.example_values)))])


def _pick(seq, rng):
    return seq[int(rng.integers(len(seq)))]


def _sentence(el: TemplateElement, value: str, rng) -> str:
    key = _pick(el.synonyms, rng)
    if el.closed:
        if el.negative_option == value == "Absent" and rng.random() < 0.5:
            return f"No {key}."
        surface = _pick(el.option_phrases(value), rng)
        return f"{_display(key)}: {surface}."
    return f"{_display(key)}: {value}."


def synth_case(schema: CprtSchema, seed: int, index: int, *, n_slides: int = 1,
               presence: dict | None = None) -> SyntheticCase:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    presence = PRESENCE if presence is None else presence
    case_id = f"TCGA-SY-{index:04d}"
    gold = {}
    for el in schema.elements:
        if el.closed or (el.pattern and el.example_values):
            if rng.random() < presence.get(el.key, 0.5):
                gold[el.key] = _draw_value(el, rng)
    sentences = []
    staging = [gold[k] for k in STAGING_KEYS if k in gold]
    if staging:
        sentences.append("Pathologic stage: " + " ".join(staging) + ".")
    for el in schema.elements:
        if el.key in gold and el.key not in STAGING_KEYS:
            sentences.append(_sentence(el, gold[el.key], rng))
    order = rng.permutation(len(sentences))
    synoptic = " ".join(sentences[i] for i in order)
    filler = [FILLERS[i] for i in sorted(rng.choice(len(FILLERS), size=3, replace=False))]
    text = ("GROSS DESCRIPTION\n" + " ".join(filler[:2]) + "\n\nSYNOPTIC REPORT\n"
            + synoptic + "\n\nCOMMENT\n" + filler[2] + "\n")
    slides = [f"{case_id}-01Z-00-DX{j + 1}" for j in range(n_slides)]
    return SyntheticCase(PathologyReport(case_id, slides, text), gold)


def synth_corpus(schema: CprtSchema, seed: int, n_cases: int | None = None, *,
                 n_slides: int | None = None, multi_slide_rate: float = 0.0,
                 presence: dict | None = None) -> list:
    """Generate cases until ``n_cases`` cases or exactly ``n_slides`` slides exist.

    With ``multi_slide_rate`` > 0 some cases carry two slides.
    """
    if (n_cases is None) == (n_slides is None):
        raise ValueError("give exactly one of n_cases or n_slides")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    cases, total = [], 0
    while (n_cases is not None and len(cases) < n_cases) or (n_slides is not None and total < n_slides):
        k = 2 if rng.random() < multi_slide_rate else 1
        if n_slides is not None:
            k = min(k, n_slides - total)
        cases.append(synth_case(schema, seed, len(cases), n_slides=k, presence=presence))
        total += k
    return cases
