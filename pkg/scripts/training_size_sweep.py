"""Mean WD EER as the number of genuine enrollment signatures per user changes."""

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
    svm_extra: tuple[int, ...] = (0, 2, 4, 6)
    runs: int = 3
    seed: int = 0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", default=SweepConfig.corpus)
    parser.add_argument("--corpus-seed", type=int, default=SweepConfig.corpus_seed)
    parser.add_argument("--svm-extra", type=int, nargs="+", default=list(SweepConfig.svm_extra),
                        help="genuine signatures added to the feature-learning ones for SVM training")
    parser.add_argument("--runs", type=int, default=SweepConfig.runs)
    parser.add_argument("--seed", type=int, default=SweepConfig.seed)
    args = parser.parse_args()
    cfg = SweepConfig(args.corpus, args.corpus_seed, tuple(args.svm_extra), args.runs, args.seed)
    records = load_or_generate(cfg.corpus, cfg.corpus_seed)
    print("enroll_n  usmg_eer  mv_eer")
    for extra in cfg.svm_extra:
        base = PipelineConfig()
        pipe = dataclasses.replace(base, protocol=dataclasses.replace(base.protocol, svm_extra=extra))
        report = evaluate_wd(records, cfg.corpus, pipe, cfg.runs, cfg.seed)
        usmg = np.mean([r.combiner_eer["usmg"] for r in report.runs])
        mv = np.mean([r.combiner_eer["mv"] for r in report.runs])
        print(f"{pipe.protocol.feature + extra:>8}  {usmg:8.4f}  {mv:6.4f}")


if __name__ == "__main__":
    main()
