"""Text-overlap metrics, closed-set accuracy and per-aspect balanced accuracy.

Tokenizer: lowercase, split on whitespace, strip leading and trailing
punctuation except '+', drop empty tokens. Internal hyphens survive, so
"HER2-enriched" and "3+" stay single tokens.

BLEU is unsmoothed. An n-gram order for which the hypothesis has no n-grams
at all (hypothesis shorter than n) is left out of the geometric mean, so a
hypothesis identical to its reference scores 1.0 for every ``max_n``; an
order with n-grams but no matches still zeroes the score. Corpus BLEU sums
clipped counts and lengths over pairs. meteor_x and ROUGE-L corpus values
are means of the sentence scores.
"""

from __future__ import annotations

import math
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .cprt.schema import ASPECT_ABBREV, DIMENSIONS
from .datasets import QaPair, canonical_answer
from .errors import EmptyInput, FileFormatError, UnknownPairId
from .io import read_jsonl

_STRIP = "".join(c for c in string.punctuation if c != "+")
METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA = 0.9, 3.0, 0.5
_DFS_BUDGET = 20000


def tokenize(text: str) -> list:
    toks = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            toks.append(tok)
    return toks


def _tokens(x) -> list:
    return tokenize(x) if isinstance(x, str) else list(x)


def _nonempty(*seqs):
    for s in seqs:
        if len(s) == 0:
            raise EmptyInput("metric inputs must be nonempty token sequences")


# BLEU ------------------------------------------------------------------------

def _ngrams(toks, n) -> Counter:
    return Counter(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))


def _closest_ref_len(c: int, refs) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def bleu_stats(hyp, refs, max_n: int = 4):
    """Clipped matches and totals per order, hypothesis and reference length."""
    matches, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        if not h:
            continue
        best = Counter()
        for r in refs:
            best |= _ngrams(r, n)
        matches[n - 1] = sum(min(c, best[g]) for g, c in h.items())
        totals[n - 1] = sum(h.values())
    return matches, totals, len(hyp), _closest_ref_len(len(hyp), refs)


def _bleu_from(matches, totals, c, r) -> float:
    logs = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        logs.append(math.log(m / t))
    if not logs:
        return 0.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(logs) / len(logs))


def bleu(hyp, refs, max_n: int = 4) -> float:
    """Sentence BLEU of ``hyp`` against one reference string or a list of them."""
    if isinstance(refs, str):
        refs = [refs]
    hyp = _tokens(hyp)
    refs = [_tokens(r) for r in refs]
    _nonempty(hyp, refs)
    _nonempty(*refs)
    return _bleu_from(*bleu_stats(hyp, refs, max_n))


def corpus_bleu(hyps, refs_list, max_n: int = 4) -> float:
    if not hyps or len(hyps) != len(refs_list):
        raise EmptyInput("corpus_bleu needs equally many nonempty hypotheses and reference sets")
    M, T, C, R = [0] * max_n, [0] * max_n, 0, 0
    for hyp, refs in zip(hyps, refs_list):
        hyp = _tokens(hyp)
        refs = [_tokens(r) for r in refs]
        _nonempty(refs, *refs)
        m, t, c, r = bleu_stats(hyp, refs, max_n)
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        C += c
        R += r
    if C == 0:
        return 0.0
    return _bleu_from(M, T, C, R)


# meteor_x --------------------------------------------------------------------

def _count_chunks(pairs) -> int:
    chunks, prev = 0, None
    for h, r in sorted(pairs):
        if prev is None or h != prev[0] + 1 or r != prev[1] + 1:
            chunks += 1
        prev = (h, r)
    return chunks


def _greedy_alignment(hyp, ref) -> list:
    free = defaultdict(list)
    for j, t in enumerate(ref):
        free[t].append(j)
    pairs, last = [], None
    for i, t in enumerate(hyp):
        slots = free.get(t)
        if not slots:
            continue
        j = last + 1 if last is not None and last + 1 in slots else slots[0]
        slots.remove(j)
        pairs.append((i, j))
        last = j
    return pairs


def alignment(hyp, ref) -> list:
    """A maximum exact-match unigram alignment with the fewest chunks.

    Exhaustive search when the number of candidate alignments is small,
    otherwise a greedy left-to-right alignment that prefers extending the
    current chunk.
    """
    hyp, ref = list(hyp), list(ref)
    ch, cr = Counter(hyp), Counter(ref)
    need = {t: min(ch[t], cr[t]) for t in ch if t in cr}
    size = 1
    for t, k in need.items():
        size *= math.comb(ch[t], k) * math.perm(cr[t], k)
        if size > _DFS_BUDGET:
            return _greedy_alignment(hyp, ref)
    positions = defaultdict(list)
    for j, t in enumerate(ref):
        positions[t].append(j)
    remaining_h = Counter(hyp)
    best = [None, math.inf]
    used = set()
    left = dict(need)

    def dfs(i, pairs, chunks, last):
        if chunks >= best[1]:
            return
        if i == len(hyp):
            best[0], best[1] = list(pairs), chunks
            return
        t = hyp[i]
        remaining_h[t] -= 1
        if left.get(t, 0) > 0:
            for j in positions[t]:
                if j in used:
                    continue
                used.add(j)
                left[t] -= 1
                extend = last is not None and last == (i - 1, j - 1)
                pairs.append((i, j))
                dfs(i + 1, pairs, chunks + (0 if extend else 1), (i, j))
                pairs.pop()
                left[t] += 1
                used.discard(j)
        # leaving this token unmatched is allowed only if later copies can cover
        if left.get(t, 0) <= remaining_h[t]:
            dfs(i + 1, pairs, chunks, None)
        remaining_h[t] += 1

    dfs(0, [], 0, None)
    return best[0] or []


def meteor_stats(hyp, ref):
    pairs = alignment(hyp, ref)
    return len(pairs), _count_chunks(pairs), len(hyp), len(ref)


def _meteor_from(m, chunks, lh, lr) -> float:
    if m == 0:
        return 0.0
    p, r = m / lh, m / lr
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor_x(hyp, ref) -> float:
    """Exact-match METEOR: Fmean = 10PR/(R+9P), penalty 0.5 (chunks/m)^3."""
    hyp, ref = _tokens(hyp), _tokens(ref)
    _nonempty(hyp, ref)
    return _meteor_from(*meteor_stats(hyp, ref))


# ROUGE-L ---------------------------------------------------------------------

def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_prf(hyp, ref) -> tuple:
    hyp, ref = _tokens(hyp), _tokens(ref)
    _nonempty(hyp, ref)
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0, 0.0, 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return p, r, 2 * p * r / (p + r)


def rouge_l(hyp, ref) -> float:
    return rouge_l_prf(hyp, ref)[2]


# accuracy --------------------------------------------------------------------

def _resolve(preds: dict, bench) -> list:
    by_id = {p.pair_id: p for p in bench}
    unknown = [pid for pid in preds if pid not in by_id]
    if unknown:
        raise UnknownPairId(f"prediction for unknown pair id {unknown[0]!r}")
    return [(by_id[pid], text) for pid, text in preds.items()]


def is_correct(pair: QaPair, text: str) -> bool:
    if pair.answer_kind == "closed":
        return canonical_answer(pair, text) == pair.answer
    return tokenize(text) == tokenize(pair.answer)


def closed_accuracy(preds: dict, bench) -> float | None:
    scored = [(p, t) for p, t in _resolve(preds, bench) if p.answer_kind == "closed"]
    if not scored:
        return None
    return sum(is_correct(p, t) for p, t in scored) / len(scored)


def balanced_accuracy_by_aspect(preds: dict, bench) -> dict:
    """Mean per-class recall per aspect; classes are (question, gold answer).

    Open answers (staging) count as correct on an exact token-sequence match.
    Aspects without scored pairs are left out.
    """
    hits = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    for pair, text in _resolve(preds, bench):
        cls = (pair.question_id, pair.answer if pair.answer_kind == "closed"
               else " ".join(tokenize(pair.answer)))
        cell = hits[pair.aspect][cls]
        cell[0] += is_correct(pair, text)
        cell[1] += 1
    out = {}
    for aspect in DIMENSIONS:
        if aspect in hits:
            recalls = [c / n for c, n in hits[aspect].values()]
            out[aspect] = sum(recalls) / len(recalls)
    for aspect in sorted(set(hits) - set(DIMENSIONS)):
        recalls = [c / n for c, n in hits[aspect].values()]
        out[aspect] = sum(recalls) / len(recalls)
    return out


# scoring a run ---------------------------------------------------------------

@dataclass
class ScoreReport:
    bleu1: float | None
    bleu4: float | None
    meteor: float | None
    rouge_l: float | None
    closed_accuracy: float | None
    per_aspect_balanced_accuracy: dict
    average: float | None
    n_scored: int
    n_text: int = 0
    n_missing: int = 0
    text_scope: str = "open"
    text_level: str = "corpus"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "bleu1": self.bleu1, "bleu4": self.bleu4, "meteor_x": self.meteor,
            "rouge_l": self.rouge_l, "closed_accuracy": self.closed_accuracy,
            "per_aspect_balanced_accuracy": dict(self.per_aspect_balanced_accuracy),
            "average": self.average, "n_scored": self.n_scored, "n_text": self.n_text,
            "n_missing": self.n_missing, "text_scope": self.text_scope,
            "text_level": self.text_level,
        }

    def table(self) -> str:
        """Plain-text table row in the usual benchmark column order."""
        cols = ["BLEU1", "BLEU4", "METEOR", "RougeL", "Acc"] + [ASPECT_ABBREV[d] for d in DIMENSIONS] + ["Avg"]
        vals = [self.bleu1, self.bleu4, self.meteor, self.rouge_l, self.closed_accuracy]
        vals += [self.per_aspect_balanced_accuracy.get(d) for d in DIMENSIONS] + [self.average]
        cells = ["/" if v is None else f"{v:.3f}" for v in vals]
        widths = [max(len(c), len(v)) for c, v in zip(cols, cells)]
        head = "  ".join(c.rjust(w) for c, w in zip(cols, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
        return head + "\n" + row + "\n"


def read_bench(path) -> list:
    _, recs = read_jsonl(path, required=("pair_id", "slide_id", "question_id", "aspect",
                                         "answer_kind", "answer"))
    return [QaPair.from_json(r) for r in recs]


def read_predictions(path) -> dict:
    preds = {}
    _, recs = read_jsonl(path, required=("pair_id", "text"), with_lines=True)
    for n, rec in recs:
        if not isinstance(rec["text"], str):
            raise FileFormatError(path, n, "prediction text must be a string")
        if rec["pair_id"] in preds:
            raise FileFormatError(path, n, f"duplicate pair_id {rec['pair_id']!r}")
        preds[rec["pair_id"]] = rec["text"]
    if not preds:
        raise FileFormatError(path, 0, "prediction file holds no predictions")
    return preds


def score_predictions(preds: dict, bench, text_scope: str = "open",
                      sentence_level: bool = False) -> ScoreReport:
    resolved = _resolve(preds, bench)
    text_pairs = [(p, t) for p, t in resolved if text_scope == "all" or p.answer_kind == "open"]
    text_pairs = [(p, t) for p, t in text_pairs if tokenize(p.answer)]
    b1 = b4 = met = rl = None
    if text_pairs:
        hyps = [tokenize(t) for _, t in text_pairs]
        refs = [tokenize(p.answer) for p, _ in text_pairs]
        if sentence_level:
            b1 = sum(_bleu_from(*bleu_stats(h, [r], 1)) for h, r in zip(hyps, refs)) / len(hyps)
            b4 = sum(_bleu_from(*bleu_stats(h, [r], 4)) for h, r in zip(hyps, refs)) / len(hyps)
        else:
            b1 = corpus_bleu(hyps, [[r] for r in refs], 1)
            b4 = corpus_bleu(hyps, [[r] for r in refs], 4)
        met = sum(_meteor_from(*meteor_stats(h, r)) if h else 0.0
                  for h, r in zip(hyps, refs)) / len(hyps)
        rl = sum(rouge_l_prf(h, r)[2] if h else 0.0 for h, r in zip(hyps, refs)) / len(hyps)
    per_aspect = balanced_accuracy_by_aspect(preds, bench)
    avg = sum(per_aspect.values()) / len(per_aspect) if per_aspect else None
    return ScoreReport(
        bleu1=b1, bleu4=b4, meteor=met, rouge_l=rl,
        closed_accuracy=closed_accuracy(preds, bench),
        per_aspect_balanced_accuracy=per_aspect, average=avg, n_scored=len(resolved),
        n_text=len(text_pairs), n_missing=len(bench) - len(resolved), text_scope=text_scope,
        text_level="sentence" if sentence_level else "corpus",
    )


def score_run(pred_file, bench_file, text_scope: str = "open",
              sentence_level: bool = False) -> ScoreReport:
    bench = read_bench(bench_file)
    preds = read_predictions(pred_file)
    return score_predictions(preds, bench, text_scope, sentence_level)
