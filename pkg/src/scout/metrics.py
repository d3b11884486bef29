"""Corpus BLEU-1..4, ROUGE-L and an exact+stem METEOR, computed from scratch.

Every score is derived from integer counts kept on the report, so a saved
metrics file can be re-scored without the texts.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

SUFFIXES = ("ing", "es", "ed", "s")


def _tokens(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def _check(candidates: Sequence, references: Sequence) -> None:
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")


# ----------------------------------------------------------------------- BLEU

def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuCounts:
    matches: list[int]       # clipped n-gram matches for n = 1..4
    totals: list[int]        # candidate n-gram counts
    cand_len: int
    ref_len: int

    def score(self, n: int) -> float:
        """BLEU-n with add-one smoothing on any order that has zero matches."""
        if not 1 <= n <= len(self.matches):
            raise ValueError(f"BLEU order {n} outside 1..{len(self.matches)}")
        if self.cand_len == 0:
            return 0.0
        log_p = 0.0
        for k in range(n):
            m, t = self.matches[k], self.totals[k]
            if m == 0:
                m, t = m + 1, t + 1
            log_p += math.log(m / t)
        bp = 1.0 if self.cand_len > self.ref_len else math.exp(1.0 - self.ref_len / self.cand_len)
        return bp * math.exp(log_p / n)

    def smoothed_orders(self, n: int = 4) -> list[int]:
        return [k + 1 for k in range(n) if self.matches[k] == 0]


def bleu_counts(candidates: Sequence, references: Sequence, max_n: int = 4) -> BleuCounts:
    _check(candidates, references)
    matches, totals = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = ngrams(c, n), ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    return BleuCounts(matches, totals, c_len, r_len)


def bleu_n(candidates: Sequence, references: Sequence, n: int) -> float:
    """Corpus BLEU-n, one reference per candidate."""
    return bleu_counts(candidates, references, max(n, 1)).score(n)


# -------------------------------------------------------------------- ROUGE-L

def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(lcs: int, cand_len: int, ref_len: int, beta_sq: float = 1.2) -> float:
    if lcs == 0 or cand_len == 0 or ref_len == 0:
        return 0.0
    p, r = lcs / cand_len, lcs / ref_len
    return (1.0 + beta_sq) * p * r / (r + beta_sq * p)


def rouge_l(candidates: Sequence, references: Sequence, beta_sq: float = 1.2) -> float:
    """Mean sentence-level ROUGE-L F-measure."""
    _check(candidates, references)
    scores = []
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        scores.append(rouge_l_pair(lcs_length(c, r), len(c), len(r), beta_sq))
    return sum(scores) / len(scores)


# --------------------------------------------------------------------- METEOR

def stem(word: str) -> str:
    for suffix in SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 2:
            return word[: -len(suffix)]
    return word


def count_chunks(alignment: dict[int, int]) -> int:
    pairs = sorted(alignment.items())
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            chunks += 1
    return chunks


def align(cand: Sequence[str], ref: Sequence[str]) -> dict[int, int]:
    """Unigram alignment ``cand index -> ref index``.

    Exact matches first, then stem matches on what is left. Within a stage,
    candidates are scanned left to right and take the reference slot right
    after their left neighbour's when it is available, else the leftmost free
    slot. A final pass moves single matches to equivalent free slots when that
    merges chunks.
    """
    alignment: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, stem):
        ref_keys = [key(w) for w in ref]
        for i, w in enumerate(cand):
            if i in alignment:
                continue
            k = key(w)
            options = [j for j, rk in enumerate(ref_keys) if rk == k and j not in used]
            if not options:
                continue
            prev = alignment.get(i - 1)
            j = prev + 1 if prev is not None and prev + 1 in options else options[0]
            alignment[i] = j
            used.add(j)

    improved = True
    while improved:
        improved = False
        for i in sorted(alignment):
            j = alignment[i]
            for target in (alignment.get(i - 1, -2) + 1, alignment.get(i + 1, -2) - 1):
                if target < 0 or target >= len(ref) or target in used or target == j:
                    continue
                same_exact = ref[target] == cand[i] and ref[j] == cand[i]
                same_stem = stem(ref[target]) == stem(cand[i])
                if not (same_exact or (ref[j] != cand[i] and same_stem)):
                    continue
                trial = dict(alignment)
                trial[i] = target
                if count_chunks(trial) < count_chunks(alignment):
                    used.discard(j)
                    used.add(target)
                    alignment = trial
                    improved = True
                    break
    return alignment


@dataclass
class MeteorPair:
    matches: int
    chunks: int
    cand_len: int
    ref_len: int

    def score(self, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
        if self.matches == 0:
            return 0.0
        p = self.matches / self.cand_len
        r = self.matches / self.ref_len
        fmean = p * r / (alpha * p + (1.0 - alpha) * r)
        penalty = gamma * (self.chunks / self.matches) ** beta
        return fmean * (1.0 - penalty)


def meteor_pair(cand, ref) -> MeteorPair:
    c, r = _tokens(cand), _tokens(ref)
    alignment = align(c, r)
    return MeteorPair(len(alignment), count_chunks(alignment), len(c), len(r))


def meteor_simplified(candidates: Sequence, references: Sequence) -> float:
    """Mean sentence METEOR (exact + suffix-stripping stem; no synonyms)."""
    _check(candidates, references)
    pairs = [meteor_pair(c, r) for c, r in zip(candidates, references)]
    return sum(p.score() for p in pairs) / len(pairs)


# --------------------------------------------------------------------- report

METRIC_NAMES = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l")


@dataclass
class MetricsReport:
    bleu: BleuCounts
    rouge: list[tuple[int, int, int]] = field(default_factory=list)   # (lcs, cand_len, ref_len)
    meteor: list[MeteorPair] = field(default_factory=list)
    rouge_beta_sq: float = 1.2

    @property
    def scores(self) -> dict[str, float]:
        out = {f"bleu{n}": self.bleu.score(n) for n in range(1, 5)}
        out["meteor"] = sum(p.score() for p in self.meteor) / len(self.meteor)
        out["rouge_l"] = sum(rouge_l_pair(*t, self.rouge_beta_sq) for t in self.rouge) / len(self.rouge)
        return out

    def __getitem__(self, name: str) -> float:
        return self.scores[name]

    @property
    def bleu_monotone(self) -> bool:
        s = self.scores
        return all(s[f"bleu{n + 1}"] <= s[f"bleu{n}"] for n in range(1, 4))

    def lines(self) -> list[str]:
        out = [f"{k}\t{v!r}" for k, v in self.scores.items()]
        out.append("# counts")
        b = self.bleu
        out.append("bleu_matches\t" + " ".join(map(str, b.matches)))
        out.append("bleu_totals\t" + " ".join(map(str, b.totals)))
        out.append(f"bleu_lengths\t{b.cand_len} {b.ref_len}")
        out.append("bleu_smoothed_orders\t" + (" ".join(map(str, b.smoothed_orders())) or "-"))
        out.append(f"rouge_beta_sq\t{self.rouge_beta_sq!r}")
        for (lcs, c, r), m in zip(self.rouge, self.meteor):
            out.append(f"pair\t{lcs} {c} {r}\t{m.matches} {m.chunks} {m.cand_len} {m.ref_len}")
        return out

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def score_corpus(candidates: Sequence, references: Sequence,
                 rouge_beta_sq: float = 1.2) -> MetricsReport:
    _check(candidates, references)
    rouge, meteor = [], []
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        rouge.append((lcs_length(c, r), len(c), len(r)))
        meteor.append(meteor_pair(c, r))
    return MetricsReport(bleu_counts(candidates, references), rouge, meteor, rouge_beta_sq)


def read_metrics(path: str | Path) -> tuple[dict[str, float], MetricsReport]:
    """Parse a metrics file into (stated scores, report rebuilt from its counts)."""
    stated: dict[str, float] = {}
    fields: dict[str, str] = {}
    rouge, meteor = [], []
    in_counts = False
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line == "# counts":
            in_counts = True
            continue
        parts = line.split("\t")
        if not in_counts:
            stated[parts[0]] = float(parts[1])
        elif parts[0] == "pair":
            lcs, c, r = map(int, parts[1].split())
            m = MeteorPair(*map(int, parts[2].split()))
            rouge.append((lcs, c, r))
            meteor.append(m)
        else:
            fields[parts[0]] = parts[1]
    c_len, r_len = map(int, fields["bleu_lengths"].split())
    bleu = BleuCounts(list(map(int, fields["bleu_matches"].split())),
                      list(map(int, fields["bleu_totals"].split())), c_len, r_len)
    return stated, MetricsReport(bleu, rouge, meteor, float(fields["rouge_beta_sq"]))
