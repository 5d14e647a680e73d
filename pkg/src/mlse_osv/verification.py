"""Writer-dependent verification with one linear SVM per snapshot.

Per user, each snapshot's features train a class-balanced linear SVM against
random forgeries (genuine signatures of other users). USMG selection then
keeps the SVM that generalizes best under dropout-perturbed re-evaluation;
majority voting over all SVMs is the baseline combiner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes, decode_container, encode_container
from .errors import DataError, DimensionError, ParameterError
from .neuralcore import make_dropout_mask

USER_MODEL_MAGIC = b"MLSV"
GENUINE = "genuine"
FORGERY = "forgery"


@dataclass(frozen=True)
class SvmConfig:
    cost: float = 1.0
    epochs: int = 200
    solver: str = "dcd"
    forgery_multiplier: int = 10
    usmg_iterations: int = 5
    usmg_dropout: float = 0.5


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    class_weights: tuple[float, float] = (1.0, 1.0)  # (positive, negative)

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.w.shape[0]:
            raise DimensionError(f"feature width {x.shape[-1]} does not match SVM width {self.w.shape[0]}")
        return x @ self.w + self.b


def balanced_class_weights(n_pos: int, n_neg: int) -> tuple[float, float]:
    """Weights inversely proportional to class size: n_total / (2 * n_class)."""
    n = n_pos + n_neg
    return n / (2 * n_pos), n / (2 * n_neg)


def svm_objective(svm: SvmModel, positives, negatives, cost: float = 1.0) -> float:
    """Primal objective 1/2 |w|^2 + cost * sum_i c_i * hinge_i with balanced c_i."""
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    c_pos, c_neg = balanced_class_weights(len(pos), len(neg))
    hinge_pos = np.maximum(0, 1 - svm.decision(pos)).sum()
    hinge_neg = np.maximum(0, 1 + svm.decision(neg)).sum()
    return float(0.5 * svm.w @ svm.w + cost * (c_pos * hinge_pos + c_neg * hinge_neg))


def _prepare(positives, negatives, cost, epochs):
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("both classes need at least one sample")
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[1] != neg.shape[1]:
        raise DimensionError(f"class feature shapes are incompatible: {pos.shape} vs {neg.shape}")
    if cost <= 0 or epochs < 1:
        raise ParameterError("cost and epochs must be positive")
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    weights = balanced_class_weights(len(pos), len(neg))
    return x, y, weights


def _dual_cd(x, y, upper, epochs, tol, rng):
    """Dual coordinate descent for the L1-loss SVM with box bounds ``upper``.

    The bias is an extra constant feature, as in liblinear.
    """
    xa = np.hstack([x, np.ones((len(x), 1))])
    q = (xa * xa).sum(axis=1)
    alpha = np.zeros(len(x))
    w = np.zeros(xa.shape[1])
    for _ in range(epochs):
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(len(x)):
            g = y[i] * (w @ xa[i]) - 1.0
            a = alpha[i]
            if a <= 0:
                pg = min(g, 0.0)
            elif a >= upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max, pg_min = max(pg_max, pg), min(pg_min, pg)
            if pg != 0.0 and q[i] > 0:
                new = min(max(a - g / q[i], 0.0), upper[i])
                w += (new - a) * y[i] * xa[i]
                alpha[i] = new
        if pg_max - pg_min < tol:
            break
    return w[:-1], float(w[-1])


def _pegasos(x, y, upper, cost, epochs, batch_size, rng):
    """Stochastic subgradient descent with 1/(lambda*t) steps and suffix averaging."""
    n, d = x.shape
    lam = 1.0 / (cost * n)
    cy = upper / cost * y
    radius = 1.0 / np.sqrt(lam)
    w, b = np.zeros(d), 0.0
    w_avg, b_avg, n_avg, t = np.zeros(d), 0.0, 0, 0
    avg_from = (epochs * -(-n // batch_size)) // 2
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            xb = x[idx]
            viol = y[idx] * (xb @ w + b) < 1
            w *= 1.0 - eta * lam
            if viol.any():
                g = cy[idx][viol]
                w += (eta / len(idx)) * (g @ xb[viol])
                b += (eta / len(idx)) * g.sum()
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            if t > avg_from:
                n_avg += 1
                w_avg += (w - w_avg) / n_avg
                b_avg += (b - b_avg) / n_avg
    return w_avg, b_avg


def train_linear_svm(positives, negatives, cost: float = 1.0, epochs: int = 200, seed=0, solver: str = "dcd", tol: float = 1e-4, batch_size: int = 1) -> SvmModel:
    """Class-balanced soft-margin linear SVM.

    Minimizes 1/2 |w|^2 + cost * sum_i c_i * max(0, 1 - y_i (w.x_i + b)) with
    c_i = n / (2 * n_class(i)). ``solver="dcd"`` runs seeded dual coordinate
    descent (bias as a constant feature) for at most ``epochs`` passes;
    ``solver="pegasos"`` runs stochastic subgradient steps for exactly
    ``epochs`` passes.
    """
    x, y, (c_pos, c_neg) = _prepare(positives, negatives, cost, epochs)
    upper = cost * np.where(y > 0, c_pos, c_neg)
    rng = np.random.default_rng(seed)
    if solver == "dcd":
        w, b = _dual_cd(x, y, upper, epochs, tol, rng)
    elif solver == "pegasos":
        if batch_size < 1:
            raise ParameterError("batch_size must be positive")
        w, b = _pegasos(x, y, upper, cost, epochs, batch_size, rng)
    else:
        raise ParameterError(f"unknown solver {solver!r}")
    # stored at float32 precision so saved models reproduce in-memory decisions
    return SvmModel(w.astype(np.float32).astype(np.float64), float(np.float32(b)), (c_pos, c_neg))


def _forgery_indices(target, counts: dict[int, int], k: int, rng: np.random.Generator, n_genuine: int | None = None):
    others = [u for u in sorted(counts) if u != target and counts[u] > 0]
    if not others:
        raise DataError(f"no other users to draw random forgeries for user {target}")
    if n_genuine is None:
        n_genuine = counts[target]
    pool = [(u, i) for u in others for i in range(counts[u])]
    n = k * n_genuine
    pick = rng.choice(len(pool), size=n, replace=n > len(pool))
    return [pool[j] for j in pick]


def sample_random_forgeries(target, features_by_user: dict[int, np.ndarray], k: int, rng: np.random.Generator, n_genuine: int | None = None) -> np.ndarray:
    """k * (target's genuine count) rows drawn uniformly from the other users.

    Without replacement when the pool is large enough.
    """
    counts = {u: len(f) for u, f in features_by_user.items()}
    idx = _forgery_indices(target, counts, k, rng, n_genuine)
    return np.array([features_by_user[u][i] for u, i in idx]).reshape(len(idx), -1)


@dataclass
class UserModel:
    user_id: int
    svms: list[SvmModel]
    selected_index: int | None = None
    threshold: float = 0.0
    usmg_scores: list[float] = field(default_factory=list)

    def decisions(self, feats_per_snapshot) -> np.ndarray:
        """Decision values of every SVM, shape (n_snapshots, n_queries)."""
        if len(feats_per_snapshot) != len(self.svms):
            raise DimensionError(f"got features from {len(feats_per_snapshot)} snapshots, model has {len(self.svms)} SVMs")
        return np.array([svm.decision(np.atleast_2d(f)) for svm, f in zip(self.svms, feats_per_snapshot)])


def build_user_model(user_id, genuine_per_snapshot, others_per_snapshot, rng: np.random.Generator, cfg: SvmConfig = SvmConfig()) -> UserModel:
    """Train one SVM per snapshot: the user's genuine features vs sampled random forgeries.

    ``others_per_snapshot[s]`` maps user id -> feature matrix for snapshot s
    (the target's own entry, if present, is ignored). Each SVM gets its own
    independent forgery sample.
    """
    widths = {np.asarray(g).shape[1] for g in genuine_per_snapshot}
    if len(widths) != 1:
        raise DimensionError(f"snapshots disagree on feature width: {sorted(widths)}")
    if len(genuine_per_snapshot) != len(others_per_snapshot):
        raise DimensionError("genuine and other-user features cover different snapshot counts")
    svms = []
    for s, child in enumerate(rng.spawn(len(genuine_per_snapshot))):
        genuine = np.asarray(genuine_per_snapshot[s])
        forgeries = sample_random_forgeries(user_id, others_per_snapshot[s], cfg.forgery_multiplier, child, len(genuine))
        svm_seed = int(child.integers(2**63))
        svms.append(train_linear_svm(genuine, forgeries, cfg.cost, cfg.epochs, svm_seed, cfg.solver))
    return UserModel(user_id, svms)


def balanced_accuracy(svm: SvmModel, genuine, forgeries, threshold: float = 0.0) -> float:
    tpr = np.mean(svm.decision(genuine) >= threshold)
    tnr = np.mean(svm.decision(forgeries) < threshold)
    return float(0.5 * (tpr + tnr))


def usmg_select(model: UserModel, genuine_per_snapshot, all_per_snapshot, rng: np.random.Generator, cfg: SvmConfig = SvmConfig()) -> int:
    """Index of the SVM with the highest accumulated balanced accuracy.

    Each iteration draws a fresh random-forgery sample and a fresh raw
    (unscaled) dropout mask; both are shared by all SVMs so they compete on
    identical data. Ties go to the lowest index. Also sets
    ``model.selected_index``.
    """
    n_snap = len(model.svms)
    if len(genuine_per_snapshot) != n_snap or len(all_per_snapshot) != n_snap:
        raise DimensionError("feature sets and SVMs cover different snapshot counts")
    n_gen, width = np.asarray(genuine_per_snapshot[0]).shape
    counts = {u: len(f) for u, f in all_per_snapshot[0].items()}
    totals = np.zeros(n_snap)
    for _ in range(cfg.usmg_iterations):
        idx = _forgery_indices(model.user_id, counts, cfg.forgery_multiplier, rng, n_gen)
        g_mask = make_dropout_mask((n_gen, width), cfg.usmg_dropout, rng, np.float64)
        f_mask = make_dropout_mask((len(idx), width), cfg.usmg_dropout, rng, np.float64)
        for s, svm in enumerate(model.svms):
            genuine = np.asarray(genuine_per_snapshot[s], dtype=np.float64) * g_mask
            forg = np.array([all_per_snapshot[s][u][i] for u, i in idx], dtype=np.float64) * f_mask
            totals[s] += balanced_accuracy(svm, genuine, forg, model.threshold)
    model.usmg_scores = totals.tolist()
    model.selected_index = int(np.argmax(totals))
    return model.selected_index


def majority_vote(decision_values) -> str:
    """Each SVM votes genuine when its decision value is >= 0; a tie means forgery."""
    votes = np.asarray(decision_values) >= 0
    return GENUINE if votes.sum() * 2 > votes.size else FORGERY


def combine_scores(model: UserModel, feats_per_snapshot, combiner: str = "usmg"):
    """Scores and accept flags for a batch of queries.

    ``usmg``: the selected SVM's decision value, accepted when >= threshold.
    ``mv``: majority vote decides; the score is the mean decision value.
    ``single:<s>``: snapshot ``s`` alone.
    """
    dec = model.decisions(feats_per_snapshot)
    if combiner == "usmg":
        if model.selected_index is None:
            raise ParameterError(f"user {model.user_id} has no selected SVM; run usmg_select first")
        score = dec[model.selected_index]
        return score, score >= model.threshold
    if combiner == "mv":
        votes = (dec >= 0).sum(axis=0)
        return dec.mean(axis=0), votes * 2 > dec.shape[0]
    if combiner.startswith("single:"):
        score = dec[int(combiner.split(":", 1)[1])]
        return score, score >= model.threshold
    raise ParameterError(f"unknown combiner {combiner!r}")


def verify_query(model: UserModel, image, snapshots, combiner: str = "usmg"):
    """Preprocess a raw image, extract features from every snapshot, decide.

    Returns ``(score, "genuine" | "forgery")``.
    """
    from .mlse import extract_features
    from .preprocess import preprocess_image

    feats = [extract_features(s, preprocess_image(image, s.config.input_shape)[None]) for s in snapshots]
    score, accept = combine_scores(model, feats, combiner)
    return float(score[0]), GENUINE if accept[0] else FORGERY


# --- persistence ------------------------------------------------------------


def encode_user_model(model: UserModel) -> bytes:
    header = json.dumps(
        {
            "user_id": int(model.user_id),
            "selected_index": model.selected_index,
            "threshold": float(model.threshold),
            "n_svms": len(model.svms),
            "class_weights": [list(s.class_weights) for s in model.svms],
            "usmg_scores": list(model.usmg_scores),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    tensors = {}
    for i, svm in enumerate(model.svms):
        tensors[f"svm{i}.w"] = svm.w
        tensors[f"svm{i}.b"] = np.array([svm.b])
    return encode_container(USER_MODEL_MAGIC, header, tensors)


def save_user_model(model: UserModel, path):
    atomic_write_bytes(path, encode_user_model(model))


def load_user_model(path) -> UserModel:
    header, tensors = decode_container(Path(path).read_bytes(), USER_MODEL_MAGIC)
    meta = json.loads(header)
    svms = [
        SvmModel(
            tensors[f"svm{i}.w"].astype(np.float64),
            float(tensors[f"svm{i}.b"][0]),
            tuple(meta["class_weights"][i]),
        )
        for i in range(meta["n_svms"])
    ]
    return UserModel(meta["user_id"], svms, meta["selected_index"], meta["threshold"], meta.get("usmg_scores", []))
