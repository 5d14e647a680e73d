"""Mean WD EER (USMG and MV) as the number of snapshots grows."""

import argparse
import dataclasses
from dataclasses import dataclass

import numpy as np

from ensemble_trend import load_or_generate
from mlse_osv.config import PipelineConfig
from mlse_osv.evaluation import evaluate_wd


@dataclass(frozen=True)
class SweepConfig:
    corpus: str = "runs/desk_corpus"
    corpus_seed: int = 0
    trials: tuple[int, ...] = (3, 6, 9, 12)
    runs: int = 3
    seed: int = 0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", default=SweepConfig.corpus)
    parser.add_argument("--corpus-seed", type=int, default=SweepConfig.corpus_seed)
    parser.add_argument("--trials", type=int, nargs="+", default=list(SweepConfig.trials))
    parser.add_argument("--runs", type=int, default=SweepConfig.runs)
    parser.add_argument("--seed", type=int, default=SweepConfig.seed)
    args = parser.parse_args()
    cfg = SweepConfig(args.corpus, args.corpus_seed, tuple(args.trials), args.runs, args.seed)
    records = load_or_generate(cfg.corpus, cfg.corpus_seed)
    print("trials  usmg_eer  mv_eer")
    for n in cfg.trials:
        base = PipelineConfig()
        pipe = dataclasses.replace(base, train=dataclasses.replace(base.train, n_trials=n))
        report = evaluate_wd(records, cfg.corpus, pipe, cfg.runs, cfg.seed)
        usmg = np.mean([r.combiner_eer["usmg"] for r in report.runs])
        mv = np.mean([r.combiner_eer["mv"] for r in report.runs])
        print(f"{n:>6}  {usmg:8.4f}  {mv:6.4f}")


if __name__ == "__main__":
    main()
