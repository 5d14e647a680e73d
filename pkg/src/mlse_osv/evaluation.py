"""Error rates, EER, and the writer-dependent / writer-independent experiment drivers."""

from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .corpus import ProtocolSplit, SignatureRecord, split_wd, split_wi
from .errors import DataError, ParameterError
from .losses import LOSS_NAMES
from .mlse import SnapshotSet, extract_features, run_mlse, single_loss_schedule
from .neuralcore import PRESETS, init_network
from .preprocess import preprocess_image, read_pgm
from .verification import UserModel, build_user_model, combine_scores, usmg_select

log = logging.getLogger(__name__)

REPORT_HEADER = "run,frr_sf,far_rf,far_sf,eer_sf,threshold"
SWEEP_HEADER = "threshold,frr,far_sf,far_rf"


@dataclass
class ScoreSet:
    genuine: np.ndarray
    skilled: np.ndarray
    random: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.skilled = np.asarray(self.skilled, dtype=np.float64).ravel()
        self.random = np.asarray(self.random, dtype=np.float64).ravel()


def far_frr_at_threshold(scores: ScoreSet, t: float):
    """(FRR, FAR on skilled, FAR on random) when accepting scores >= t.

    A rate over an empty list is NaN.
    """
    if scores.genuine.size == 0:
        raise DataError("FRR needs at least one genuine score")

    def accepted(x):
        return float(np.mean(x >= t)) if x.size else float("nan")

    return 1.0 - accepted(scores.genuine), accepted(scores.skilled), accepted(scores.random)


def _rates(sorted_gen, sorted_neg, thresholds):
    frr = np.searchsorted(sorted_gen, thresholds, side="left") / sorted_gen.size
    far = 1.0 - np.searchsorted(sorted_neg, thresholds, side="left") / sorted_neg.size
    return frr, far


def compute_eer(scores: ScoreSet, negatives: str = "skilled"):
    """Equal error rate between genuine and the chosen negative scores.

    Thresholds sweep every distinct score plus +-inf. At the first threshold
    where FRR >= FAR the crossing is either exact or linearly interpolated
    from the previous threshold. Returns ``(eer, threshold)``.
    """
    neg = scores.skilled if negatives == "skilled" else scores.random
    if scores.genuine.size == 0 or neg.size == 0:
        raise DataError("EER needs genuine and forgery scores")
    gen = np.sort(scores.genuine)
    neg = np.sort(neg)
    cand = np.concatenate([[-np.inf], np.unique(np.concatenate([gen, neg])), [np.inf]])
    frr, far = _rates(gen, neg, cand)
    diff = frr - far
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0:
        return float(frr[k]), float(cand[k])
    d0, d1 = diff[k - 1], diff[k]
    alpha = -d0 / (d1 - d0)
    eer = frr[k - 1] + alpha * (frr[k] - frr[k - 1])
    t0, t1 = cand[k - 1], cand[k]
    threshold = t0 + alpha * (t1 - t0) if np.isfinite(t1) else t0
    return float(eer), float(threshold)


def threshold_sweep(scores: ScoreSet):
    """Rows (threshold, FRR, FAR_sf, FAR_rf) at every distinct score plus +-inf."""
    allv = np.concatenate([scores.genuine, scores.skilled, scores.random])
    cand = np.concatenate([[-np.inf], np.unique(allv), [np.inf]])
    return [(float(t), *far_frr_at_threshold(scores, t)) for t in cand]


# --- experiment drivers -----------------------------------------------------


@dataclass
class RunMetrics:
    run: int
    frr_sf: float
    far_rf: float
    far_sf: float
    eer_sf: float
    threshold: float
    combiner_eer: dict[str, float] = field(default_factory=dict)
    epochs: list[int] = field(default_factory=list)
    first_trial_accuracy: float = float("nan")


@dataclass
class EvalReport:
    runs: list[RunMetrics]
    mode: str = "WD"
    score_sets: list[ScoreSet] = field(default_factory=list)

    METRICS = ("frr_sf", "far_rf", "far_sf", "eer_sf", "threshold")

    def _column(self, name):
        return np.array([getattr(r, name) for r in self.runs], dtype=np.float64)

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(self._column(m).mean()) for m in self.METRICS}

    @property
    def std(self) -> dict[str, float]:
        if len(self.runs) < 2:
            raise ParameterError("standard deviation needs at least 2 runs")
        return {m: float(self._column(m).std(ddof=1)) for m in self.METRICS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(REPORT_HEADER + "\n")
        for r in self.runs:
            buf.write(",".join([str(r.run)] + [repr(float(getattr(r, m))) for m in self.METRICS]) + "\n")
        for label, row in (("mean", self.mean), ("std", self.std)):
            buf.write(",".join([label] + [repr(row[m]) for m in self.METRICS]) + "\n")
        return buf.getvalue()


def sweep_csv(scores: ScoreSet) -> str:
    lines = [SWEEP_HEADER]
    lines += [",".join(repr(v) for v in row) for row in threshold_sweep(scores)]
    return "\n".join(lines) + "\n"


@dataclass
class SplitResult:
    snapshots: SnapshotSet
    user_models: dict[int, UserModel]
    scores: dict[str, ScoreSet]


class ImageCache:
    """Preprocessed network inputs keyed by manifest path."""

    def __init__(self, root, input_shape):
        self.root = Path(root)
        self.input_shape = tuple(input_shape)
        self._cache: dict[str, np.ndarray] = {}

    def get(self, paths) -> np.ndarray:
        out = []
        for p in paths:
            if p not in self._cache:
                self._cache[p] = preprocess_image(read_pgm(self.root / p), self.input_shape)
            out.append(self._cache[p])
        return np.stack(out) if out else np.zeros((0, *self.input_shape), np.float32)


def train_snapshots(split: ProtocolSplit, images: ImageCache, cfg: PipelineConfig, seed_seq: np.random.SeedSequence, checkpoint_dir=None, single_loss: str | None = None) -> SnapshotSet:
    """Feature learning on the split's feature users (identification over those users).

    With ``single_loss`` set, trains the one-trial single-loss baseline from
    the same initial weights instead of the snapshot ensemble.
    """
    users = split.feature_users
    label_of = {u: i for i, u in enumerate(users)}
    recs = [r for u in users for r in split.feature[u]]
    x = images.get([r.path for r in recs])
    y = np.array([label_of[r.user_id] for r in recs])
    net_cfg = PRESETS[cfg.network.preset](len(users), input_shape=tuple(cfg.network.input_shape))
    init_seed, train_seed = (int(s.generate_state(1, np.uint64)[0]) for s in seed_seq.spawn(2))
    state = init_network(net_cfg, init_seed)
    if single_loss is None:
        return run_mlse(state, x, y, cfg.train, seed=train_seed, checkpoint_dir=checkpoint_dir)
    hyper = dataclasses.replace(cfg.train, n_trials=1)
    return run_mlse(state, x, y, hyper, seed=train_seed, weight_schedule=single_loss_schedule(single_loss))


def snapshot_features(snapshots, images: ImageCache, paths) -> list[dict[str, np.ndarray]]:
    x = images.get(paths)
    out = []
    for state in snapshots:
        f = extract_features(state, x)
        out.append(dict(zip(paths, f)))
    return out


def enroll_users(split: ProtocolSplit, feats, cfg: PipelineConfig, seed_seq: np.random.SeedSequence) -> dict[int, UserModel]:
    """Train and USMG-select a UserModel for every evaluated user of the split."""
    users = split.eval_users
    n_snap = len(feats)
    by_user = [{u: np.array([feats[s][r.path] for r in split.enrollment(u)]) for u in users} for s in range(n_snap)]
    models = {}
    for u, child in zip(users, seed_seq.spawn(len(users))):
        build_rng, select_rng = (np.random.default_rng(c) for c in child.spawn(2))
        genuine = [by_user[s][u] for s in range(n_snap)]
        model = build_user_model(u, genuine, by_user, build_rng, cfg.svm)
        usmg_select(model, genuine, by_user, select_rng, cfg.svm)
        models[u] = model
    return models


def score_split(split: ProtocolSplit, feats, models: dict[int, UserModel], combiners) -> dict[str, ScoreSet]:
    """Pooled scores over users: own test genuine, own skilled, other users' test genuine."""
    users = split.eval_users
    n_snap = len(feats)

    def matrices(recs):
        return [np.array([feats[s][r.path] for r in recs]).reshape(len(recs), -1) for s in range(n_snap)]

    out = {}
    for comb in combiners:
        gen, sk, rnd = [], [], []
        for u in users:
            m = models[u]
            gen.append(combine_scores(m, matrices(split.test_genuine[u]), comb)[0])
            if split.test_skilled[u]:
                sk.append(combine_scores(m, matrices(split.test_skilled[u]), comb)[0])
            others = [r for v in users if v != u for r in split.test_genuine[v]]
            if others:
                rnd.append(combine_scores(m, matrices(others), comb)[0])
        out[comb] = ScoreSet(np.concatenate(gen), np.concatenate(sk) if sk else [], np.concatenate(rnd) if rnd else [])
    return out


def run_split(split: ProtocolSplit, images: ImageCache, cfg: PipelineConfig, seed: int, checkpoint_dir=None, baselines: bool = False) -> SplitResult:
    """Train, enroll and score one split.

    Score sets are keyed by combiner: ``usmg``, ``mv`` and ``single:s`` for
    each snapshot s. With ``baselines``, ``loss:<name>`` adds a separately
    trained single-loss network per loss (same initial weights, one SVM per user).
    """
    train_ss, enroll_ss = np.random.SeedSequence(seed).spawn(2)
    snaps = train_snapshots(split, images, cfg, train_ss, checkpoint_dir)
    paths = sorted({r.path for u in split.eval_users for r in split.enrollment(u) + split.test_genuine[u] + split.test_skilled[u]})
    feats = snapshot_features(snaps.states, images, paths)
    models = enroll_users(split, feats, cfg, enroll_ss)
    combiners = ["usmg", "mv"] + [f"single:{s}" for s in range(len(snaps))]
    scores = score_split(split, feats, models, combiners)
    if baselines:
        for loss in LOSS_NAMES:
            base = train_snapshots(split, images, cfg, train_ss, single_loss=loss)
            base_feats = snapshot_features(base.states, images, paths)
            base_models = enroll_users(split, base_feats, cfg, enroll_ss)
            scores[f"loss:{loss}"] = score_split(split, base_feats, base_models, ["single:0"])["single:0"]
    return SplitResult(snaps, models, scores)


def metrics_for(run: int, result: SplitResult, combiner: str = "usmg") -> RunMetrics:
    scores = result.scores[combiner]
    eer, thr = compute_eer(scores)
    frr, far_sf, far_rf = far_frr_at_threshold(scores, thr)
    return RunMetrics(
        run,
        frr,
        far_rf,
        far_sf,
        eer,
        thr,
        combiner_eer={c: compute_eer(s)[0] for c, s in result.scores.items()},
        epochs=[r.epochs_run for r in result.snapshots.records],
        first_trial_accuracy=result.snapshots.records[0].accuracy,
    )


def _run_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def evaluate_wd(records: list[SignatureRecord], root, cfg: PipelineConfig = PipelineConfig(), runs: int = 10, seed: int = 0, combiner: str = "usmg", baselines: bool = False) -> EvalReport:
    """Repeated random sub-sampling: each run re-splits, retrains and re-enrolls.

    Per-combiner EERs of every run (including single-loss baselines when
    requested) are kept in ``RunMetrics.combiner_eer``.
    """
    if runs < 2:
        raise ParameterError("at least 2 runs are needed for a mean/std report")
    images = ImageCache(root, cfg.network.input_shape)
    report = EvalReport([], "WD")
    for r, run_seed in enumerate(_run_seeds(seed, runs)):
        split_seed, pipe_seed = _run_seeds(run_seed, 2)
        result = run_split(split_wd(records, cfg.protocol, split_seed), images, cfg, pipe_seed, baselines=baselines)
        report.runs.append(metrics_for(r, result, combiner))
        report.score_sets.append(result.scores[combiner])
        log.info("WD run %d: EER %.4f (%s)", r, report.runs[-1].eer_sf, report.runs[-1].combiner_eer)
    return report


def evaluate_wi(records: list[SignatureRecord], root, cfg: PipelineConfig = PipelineConfig(), reps: int = 5, seed: int = 0, combiner: str = "usmg", baselines: bool = False) -> EvalReport:
    """Per repetition: split users 20/80, learn on one fold, evaluate the other, then swap."""
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    images = ImageCache(root, cfg.network.input_shape)
    report = EvalReport([], "WI")
    for rep, rep_seed in enumerate(_run_seeds(seed, reps)):
        split_seed, *pipe_seeds = _run_seeds(rep_seed, 3)
        for k, (split, pipe_seed) in enumerate(zip(split_wi(records, cfg.protocol, split_seed), pipe_seeds)):
            result = run_split(split, images, cfg, pipe_seed, baselines=baselines)
            report.runs.append(metrics_for(2 * rep + k, result, combiner))
            report.score_sets.append(result.scores[combiner])
            log.info("WI rep %d fold %d: EER %.4f", rep, k, report.runs[-1].eer_sf)
    return report
