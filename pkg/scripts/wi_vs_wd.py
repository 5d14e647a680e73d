"""Compare writer-independent and writer-dependent feature learning on the same corpus."""

import argparse
from dataclasses import dataclass

from ensemble_trend import load_or_generate
from mlse_osv.config import PipelineConfig
from mlse_osv.evaluation import evaluate_wd, evaluate_wi


@dataclass(frozen=True)
class CompareConfig:
    corpus: str = "runs/desk_corpus"
    corpus_seed: int = 0
    runs: int = 5
    reps: int = 2
    seed: int = 0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", default=CompareConfig.corpus)
    parser.add_argument("--corpus-seed", type=int, default=CompareConfig.corpus_seed)
    parser.add_argument("--runs", type=int, default=CompareConfig.runs)
    parser.add_argument("--reps", type=int, default=CompareConfig.reps)
    parser.add_argument("--seed", type=int, default=CompareConfig.seed)
    cfg = CompareConfig(**{k: v for k, v in vars(parser.parse_args()).items()})
    records = load_or_generate(cfg.corpus, cfg.corpus_seed)
    wd = evaluate_wd(records, cfg.corpus, PipelineConfig(), cfg.runs, cfg.seed)
    wi = evaluate_wi(records, cfg.corpus, PipelineConfig(), cfg.reps, cfg.seed)
    for rep in (wd, wi):
        m, s = rep.mean, rep.std
        print(f"{rep.mode}: EER(SF) {m['eer_sf']:.4f} +- {s['eer_sf']:.4f} over {len(rep.runs)} evaluations, FAR(RF) {m['far_rf']:.4f}")


if __name__ == "__main__":
    main()
