"""Train and score each fusion variant under one corpus, seed set and budget."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .data import Corpus
from .generation import corpus_evaluate
from .metrics import METRIC_NAMES, MetricsReport
from .model import Scout
from .training import train

log = logging.getLogger(__name__)


@dataclass
class AblationResult:
    corpus_checksum: str
    seeds: list[int]
    runs: dict[str, list[MetricsReport]] = field(default_factory=dict)

    def mean(self, mode: str, metric: str) -> float:
        return float(np.mean([r[metric] for r in self.runs[mode]]))

    def table(self) -> list[str]:
        lines = [f"# corpus_checksum\t{self.corpus_checksum}",
                 "# seeds\t" + " ".join(map(str, self.seeds)),
                 "mode\t" + "\t".join(METRIC_NAMES)]
        for mode in self.runs:
            lines.append(mode + "\t" + "\t".join(f"{self.mean(mode, m):.6f}" for m in METRIC_NAMES))
        return lines

    def per_seed(self) -> list[str]:
        lines = ["mode\tseed\t" + "\t".join(METRIC_NAMES)]
        for mode, reports in self.runs.items():
            for seed, rep in zip(self.seeds, reports):
                lines.append(f"{mode}\t{seed}\t" + "\t".join(f"{rep[m]:.6f}" for m in METRIC_NAMES))
        return lines

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "ablation.tsv").write_text("\n".join(self.table()) + "\n", encoding="utf-8")
        (out / "ablation_runs.tsv").write_text("\n".join(self.per_seed()) + "\n", encoding="utf-8")


def run_ablation(corpus: Corpus, config: RunConfig, modes: Sequence[str] | None = None,
                 seeds: Sequence[int] | None = None) -> AblationResult:
    """Train every mode for every seed on ``corpus`` and score its test split."""
    modes = list(modes or config.modes)
    seeds = list(seeds if seeds is not None else config.seeds)
    result = AblationResult(corpus.checksum(), seeds)
    vocab = corpus.vocab
    for mode in modes:
        result.runs[mode] = []
        for seed in seeds:
            run_cfg = config.replace(fusion_mode=mode, seed=seed)
            model = Scout(run_cfg.model_config(len(vocab)), seed=seed)
            trained = train(model, corpus.splits["train"], corpus.splits["val"],
                            run_cfg.train_config)
            trained.load_best()
            report, _ = corpus_evaluate(model, corpus.splits["test"], vocab,
                                        config.beam_size, config.max_len, config.length_alpha)
            log.info("ablation %s seed %d bleu4 %.4f", mode, seed, report["bleu4"])
            result.runs[mode].append(report)
    return result
