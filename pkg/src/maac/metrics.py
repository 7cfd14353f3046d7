"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D and SPIDEr.

Conventions follow the common captioning evaluation toolkit: corpus-level
BLEU with the closest reference length, ROUGE-L with beta = 1.2 taking the
best precision and best recall over references, CIDEr-D with document
frequencies from the evaluated references, clipped n-gram weights, a Gaussian
length penalty (sigma = 6) and a x10 scale.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import lcs_length

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
CIDER_N = 4


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPair:
    clip_id: str
    hypothesis: tuple
    references: tuple

    def __post_init__(self):
        object.__setattr__(self, "hypothesis", tuple(self.hypothesis))
        object.__setattr__(self, "references", tuple(tuple(r) for r in self.references))
        if not self.references or not any(self.references):
            raise MetricError(f"{self.clip_id}: needs at least one non-empty reference")

    @classmethod
    def from_text(cls, clip_id: str, hypothesis: str, references) -> "EvalPair":
        return cls(clip_id, hypothesis.split(), [r.split() for r in references])


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(pairs) -> list:
    pairs = list(pairs)
    if not pairs:
        raise MetricError("no hypotheses to score")
    return pairs


# -- BLEU ---------------------------------------------------------------------
def bleu_stats(pairs, max_n: int = 4) -> dict:
    """Corpus totals: matched / guessed n-grams per order, hypothesis and reference length."""
    matched, guessed = [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for p in _check(pairs):
        h = p.hypothesis
        hyp_len += len(h)
        ref_len += min((abs(len(r) - len(h)), len(r)) for r in p.references)[1]
        for n in range(1, max_n + 1):
            hc = _ngrams(h, n)
            best = Counter()
            for r in p.references:
                best |= _ngrams(r, n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in hc.items())
            guessed[n - 1] += max(len(h) - n + 1, 0)
    return {"matched": matched, "guessed": guessed, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu_n(pairs, n: int, smoothing: bool = False) -> float:
    """Corpus BLEU-n; ``smoothing`` adds one to both counts for orders >= 2."""
    if not 1 <= n <= 4:
        raise MetricError("BLEU order must be in 1..4")
    s = bleu_stats(pairs, n)
    log_p = 0.0
    for k in range(n):
        m, g = s["matched"][k], s["guessed"][k]
        if smoothing and k > 0:
            m, g = m + 1, g + 1
        if m == 0 or g == 0:
            return 0.0
        log_p += math.log(m / g)
    c, r = s["hyp_len"], s["ref_len"]
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / n)


# -- ROUGE-L ------------------------------------------------------------------
def _ids(*seqs):
    table = {}
    return [np.array([table.setdefault(w, len(table)) for w in s], dtype=np.int64) for s in seqs]


def rouge_l_clip(hypothesis, references, beta: float = ROUGE_BETA, aggregate: str = "toolkit") -> float:
    """ROUGE-L of one clip.

    ``toolkit``: best precision and best recall over references combined once.
    ``max_f``: best per-reference F-measure.
    """
    if any(len(r) == 0 for r in references):
        raise MetricError("empty reference")
    if len(hypothesis) == 0:
        return 0.0
    precs, recs, fs = [], [], []
    for r in references:
        h_ids, r_ids = _ids(hypothesis, r)
        lcs = lcs_length(h_ids, r_ids)
        p, rc = lcs / len(hypothesis), lcs / len(r)
        precs.append(p)
        recs.append(rc)
        fs.append(_f_beta(p, rc, beta))
    if aggregate == "toolkit":
        return _f_beta(max(precs), max(recs), beta)
    if aggregate == "max_f":
        return max(fs)
    raise MetricError(f"unknown ROUGE-L aggregate {aggregate!r}")


def _f_beta(p: float, r: float, beta: float) -> float:
    if p == 0.0 or r == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * p * r / (r + b2 * p)


def rouge_l(pairs, beta: float = ROUGE_BETA, aggregate: str = "toolkit") -> float:
    pairs = _check(pairs)
    return float(np.mean([rouge_l_clip(p.hypothesis, p.references, beta, aggregate) for p in pairs]))


# -- CIDEr-D ------------------------------------------------------------------
def _counts(tokens) -> Counter:
    out = Counter()
    for n in range(1, CIDER_N + 1):
        out.update(_ngrams(tokens, n))
    return out


def _tfidf(counts: Counter, df: Counter, log_n: float):
    vec = [dict() for _ in range(CIDER_N)]
    for g in sorted(counts):
        vec[len(g) - 1][g] = counts[g] * (log_n - math.log(max(1.0, df[g])))
    sq = [sum(v * v for v in d.values()) for d in vec]
    return vec, sq


def _cider_sim(vh, sqh, lh, vr, sqr, lr, sigma: float) -> float:
    penalty = math.exp(-((lh - lr) ** 2) / (2.0 * sigma * sigma))
    total = 0.0
    for n in range(CIDER_N):
        dot = sum(min(w, vr[n].get(g, 0.0)) * vr[n].get(g, 0.0) for g, w in vh[n].items())
        if sqh[n] != 0.0 and sqr[n] != 0.0:
            dot /= math.sqrt(sqh[n] * sqr[n])
        total += dot * penalty
    return total / CIDER_N


class CiderD:
    """CIDEr-D scorer with document frequencies fixed from a reference corpus.

    ``reference_sets`` holds one list of tokenised references per clip. The
    evaluation metric builds it from the evaluated corpus itself; the RL reward
    builds it once from the training references.
    """

    def __init__(self, reference_sets, sigma: float = CIDER_SIGMA):
        reference_sets = list(reference_sets)
        if not reference_sets:
            raise MetricError("CIDEr-D needs at least one clip of references")
        self.sigma = sigma
        self.df = Counter()
        for refs in reference_sets:
            self.df.update(set().union(*[set(_counts(r)) for r in refs]))
        self.log_n = math.log(float(len(reference_sets)))

    def score(self, hypothesis, references) -> float:
        """Per-clip CIDEr-D in [0, 10]."""
        if not references:
            raise MetricError("no references for this clip")
        vh, sqh = _tfidf(_counts(hypothesis), self.df, self.log_n)
        total = 0.0
        for r in references:
            vr, sqr = _tfidf(_counts(r), self.df, self.log_n)
            total += _cider_sim(vh, sqh, len(hypothesis), vr, sqr, len(r), self.sigma)
        return 10.0 * total / len(references)


def cider_d_per_clip(pairs, sigma: float = CIDER_SIGMA) -> list:
    pairs = _check(pairs)
    scorer = CiderD([p.references for p in pairs], sigma)
    return [scorer.score(p.hypothesis, p.references) for p in pairs]


def cider_d(pairs, sigma: float = CIDER_SIGMA) -> float:
    return float(np.mean(cider_d_per_clip(pairs, sigma)))


# -- SPIDEr and reports ---------------------------------------------------------
SPIDER_MODES = ("raw", "unit")


def spider(cider_d_score: float | None, spice_score: float | None, mode: str = "raw") -> float | None:
    """Mean of CIDEr-D and SPICE.

    ``raw`` averages the two numbers as given (what the published tables do
    with display-scaled values); ``unit`` first divides CIDEr-D by 10.
    Missing SPICE gives ``None`` rather than a default.
    """
    if mode not in SPIDER_MODES:
        raise MetricError(f"unknown SPIDEr mode {mode!r}")
    if spice_score is None or cider_d_score is None:
        return None
    c = cider_d_score / 10.0 if mode == "unit" else cider_d_score
    return (c + spice_score) / 2.0


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider_d: float
    spice: float | None = None
    spider: float | None = None
    spider_mode: str = "raw"
    n_clips: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.spice is None:
            d.pop("spice")
        if self.spider is None:
            d.pop("spider")
            d.pop("spider_mode")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Fixed-width summary with values x100, as printed in result tables."""
        rows = [("BLEU-1", self.bleu1), ("BLEU-2", self.bleu2), ("BLEU-3", self.bleu3),
                ("BLEU-4", self.bleu4), ("ROUGE-L", self.rouge_l), ("CIDEr-D", self.cider_d)]
        if self.spice is not None:
            rows.append(("SPICE", self.spice))
        if self.spider is not None:
            rows.append(("SPIDEr", self.spider))
        lines = [f"{'metric':<8} {'score':>7}", "-" * 16]
        lines += [f"{name:<8} {100.0 * v:>7.1f}" for name, v in rows]
        return "\n".join(lines)


def evaluate(pairs, spice: float | None = None, spider_mode: str = "raw", bleu_smoothing: bool = False) -> MetricReport:
    pairs = _check(pairs)
    b = [bleu_n(pairs, n, bleu_smoothing) for n in range(1, 5)]
    c = cider_d(pairs)
    return MetricReport(b[0], b[1], b[2], b[3], rouge_l(pairs), c, spice, spider(c, spice, spider_mode),
                        spider_mode, len(pairs))
