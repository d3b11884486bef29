"""Greedy and beam-search report generation, plus corpus evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import BOS, EOS, PAD, FeatureBundle, Vocabulary
from .decoder import GateTrace
from .metrics import MetricsReport, score_corpus
from .model import Batch, Memories, Scout

StepFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool = False

    def score(self, alpha: float) -> float:
        return self.logprob / (len(self.tokens) ** alpha) if alpha else self.logprob


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def beam_search(step: StepFn, beam_size: int, max_len: int, alpha: float = 0.7,
                bos: int = BOS, eos: int = EOS, banned: Sequence[int] = (PAD, BOS)
                ) -> BeamHypothesis:
    """Breadth-limited search over ``step`` log-probabilities.

    ``step`` maps a ``(N, t)`` array of prefixes (each starting with ``bos``)
    to ``(N, V)`` next-token log-probabilities. Candidates are ranked by
    ``logprob / len**alpha``; exact ties prefer the larger last-step
    log-probability, then the lexicographically smaller sequence. Hypotheses
    still open after ``max_len`` steps count as complete outputs; the best of
    those and the EOS-terminated ones is returned.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [BeamHypothesis((), 0.0)]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        prefixes = np.array([(bos,) + h.tokens for h in live], dtype=np.int64)
        logp = np.array(step(prefixes), dtype=np.float64)
        logp[:, list(banned)] = -np.inf
        cands = []
        for h, row in zip(live, logp):
            for tok in np.flatnonzero(np.isfinite(row)):
                hyp = BeamHypothesis(h.tokens + (int(tok),), h.logprob + row[tok], tok == eos)
                cands.append((-hyp.score(alpha), -row[tok], hyp.tokens, hyp))
        cands.sort(key=lambda c: c[:3])
        live = []
        for *_, hyp in cands[:beam_size]:
            (finished if hyp.finished else live).append(hyp)
        if not live:
            break
        if alpha == 0 and finished:
            # log-probs only fall, so no live prefix can overtake the best finished one
            if max(h.logprob for h in finished) >= max(h.logprob for h in live):
                break
    pool = finished + live

    def key(h):
        return (-h.score(alpha), h.tokens)

    return min(pool, key=key)


def greedy_search(step: StepFn, max_len: int, bos: int = BOS, eos: int = EOS,
                  banned: Sequence[int] = (PAD, BOS)) -> BeamHypothesis:
    tokens: list[int] = []
    total = 0.0
    for _ in range(max_len):
        logp = np.array(step(np.array([[bos] + tokens], dtype=np.int64))[0], dtype=np.float64)
        logp[list(banned)] = -np.inf
        tok = int(np.argmax(logp))
        tokens.append(tok)
        total += logp[tok]
        if tok == eos:
            return BeamHypothesis(tuple(tokens), total, True)
    return BeamHypothesis(tuple(tokens), total, False)


def model_step(model: Scout, memories: Memories) -> StepFn:
    """Next-token log-probs for prefixes that all share one case's memories."""
    def step(prefixes: np.ndarray) -> np.ndarray:
        rows = np.zeros(len(prefixes), dtype=np.int64)
        logits = model.decode(prefixes, memories.select(rows)).logits.data[:, -1]
        return _log_softmax(logits)
    return step


def gate_trace(model: Scout, memories: Memories, tokens: Sequence[int]) -> GateTrace:
    """Teacher-forced gate weights of the last decoder layer for ``tokens``.

    Row ``t`` holds the weights used when token ``t`` was emitted.
    """
    tokens = list(tokens)
    if not tokens or model.config.fusion_mode != "film_gated":
        return GateTrace(tokens, np.zeros((len(tokens), model.config.heads, 3)))
    inputs = np.array([[BOS] + tokens[:-1]], dtype=np.int64)
    out = model.decode(inputs, memories)
    return GateTrace(tokens, out.gates[-1].data[0])


def beam_generate(model: Scout, bundle: FeatureBundle, beam_size: int = 3, max_len: int = 32,
                  length_alpha: float = 0.7) -> tuple[list[int], GateTrace]:
    memories = model.encode(Batch.from_bundles([bundle]))
    step = model_step(model, memories)
    best = beam_search(step, beam_size, max_len, length_alpha)
    return list(best.tokens), gate_trace(model, memories, best.tokens)


def greedy_generate(model: Scout, bundle: FeatureBundle, max_len: int = 32) -> list[int]:
    memories = model.encode(Batch.from_bundles([bundle]))
    return list(greedy_search(model_step(model, memories), max_len).tokens)


@dataclass
class Generation:
    case_id: str
    generated: str
    reference: str


def corpus_evaluate(model: Scout, bundles: Sequence[FeatureBundle], vocab: Vocabulary,
                    beam_size: int = 3, max_len: int = 32, length_alpha: float = 0.7,
                    generator: Callable | None = None) -> tuple[MetricsReport, list[Generation]]:
    """Generate for every bundle and score against its reference report.

    ``generator(bundle) -> token ids`` overrides beam search (used for oracle
    baselines such as copying the reference).
    """
    if not bundles:
        raise ValueError("empty split")
    gens = []
    for b in bundles:
        if generator is not None:
            ids = generator(b)
        else:
            ids, _ = beam_generate(model, b, beam_size, max_len, length_alpha)
        gens.append(Generation(b.case_id, vocab.decode(ids), vocab.decode(b.report_tokens)))
    report = score_corpus([g.generated for g in gens], [g.reference for g in gens])
    return report, gens


def write_generations(gens: Sequence[Generation], path: str | Path) -> None:
    lines = [f"{g.case_id}\t{g.generated}\t{g.reference}" for g in gens]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
