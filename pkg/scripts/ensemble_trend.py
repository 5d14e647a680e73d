"""Per-seed EER of every combiner and single-loss baseline on the desk corpus (WD protocol)."""

import argparse
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mlse_osv.config import PipelineConfig
from mlse_osv.corpus import GeneratorConfig, generate_corpus, load_manifest
from mlse_osv.evaluation import evaluate_wd


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str = "runs/desk_corpus"
    corpus_seed: int = 0
    runs: int = 5
    seed: int = 0
    baselines: bool = True
    out: str = "runs/ensemble_trend.json"


def load_or_generate(path, seed, generator=GeneratorConfig()):
    root = Path(path)
    if not (root / "manifest.tsv").exists():
        generate_corpus(root, generator, seed)
    return load_manifest(root / "manifest.tsv")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    for f in dataclasses.fields(ExperimentConfig):
        kind = (lambda s: s.lower() in ("1", "true", "yes")) if f.type in (bool, "bool") else type(f.default)
        parser.add_argument(f"--{f.name.replace('_', '-')}", type=kind, default=f.default)
    cfg = ExperimentConfig(**vars(parser.parse_args()))
    records = load_or_generate(cfg.corpus, cfg.corpus_seed)
    report = evaluate_wd(records, cfg.corpus, PipelineConfig(), cfg.runs, cfg.seed, baselines=cfg.baselines)
    table = [r.combiner_eer for r in report.runs]
    names = sorted(table[0])
    print("run  " + "  ".join(f"{n:>10}" for n in names))
    for r, row in enumerate(table):
        print(f"{r:>3}  " + "  ".join(f"{row[n]:10.4f}" for n in names))
    print("mean " + "  ".join(f"{np.mean([row[n] for row in table]):10.4f}" for n in names))
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.out).write_text(json.dumps({"config": dataclasses.asdict(cfg), "eer": table}, indent=2))


if __name__ == "__main__":
    main()
