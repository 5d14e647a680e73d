"""Synthetic signature corpus, manifest I/O and protocol splits.

The generator draws a per-user stroke template (a few chains of cubic Bezier
segments). Genuine samples perturb it slightly; skilled forgeries perturb it
more and may lose or gain a stroke, so they stay closer to the victim's
template than to any other user's.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_text
from .errors import DataError, ManifestParseError, ParameterError
from .preprocess import GrayImage, write_pgm

KINDS = ("genuine", "skilled")
MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class SignatureRecord:
    path: str
    user_id: int
    kind: str
    split: str = ""


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 20
    n_genuine: int = 20
    n_skilled: int = 10
    width: int = 32
    height: int = 32
    genuine_jitter: float = 0.012
    genuine_rotation_deg: float = 3.0
    genuine_scale: float = 0.03
    genuine_shift: float = 0.015
    skilled_jitter: float = 0.035
    skilled_rotation_deg: float = 7.0
    skilled_scale: float = 0.07
    skilled_shift: float = 0.035
    stroke_drop_prob: float = 0.3
    stroke_add_prob: float = 0.3
    pen_width_px: float = 0.9


# --- rendering --------------------------------------------------------------


def _bezier(ctrl: np.ndarray, n: int = 24) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2, p3 = ctrl
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


def _random_stroke(rng: np.random.Generator, n_segments: int) -> np.ndarray:
    """Control points of a chain of cubic segments, shape (3*n_segments + 1, 2)."""
    start = np.array([rng.uniform(0.12, 0.5), rng.uniform(0.3, 0.7)])
    pts = [start]
    for _ in range(3 * n_segments):
        step = np.array([rng.uniform(-0.05, 0.22), rng.uniform(-0.25, 0.25)])
        pts.append(np.clip(pts[-1] + step, 0.08, 0.92))
    return np.array(pts)


def make_template(rng: np.random.Generator) -> list[np.ndarray]:
    n_strokes = int(rng.integers(2, 4))
    return [_random_stroke(rng, int(rng.integers(1, 3))) for _ in range(n_strokes)]


def _polyline(stroke: np.ndarray) -> np.ndarray:
    segs = [_bezier(stroke[i : i + 4]) for i in range(0, len(stroke) - 1, 3)]
    return np.concatenate(segs)


def _affine(points: np.ndarray, rng, rotation_deg, scale, shift) -> np.ndarray:
    theta = np.deg2rad(rng.normal(0.0, rotation_deg))
    s = 1.0 + rng.normal(0.0, scale)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]) * s
    center = np.array([0.5, 0.5])
    return (points - center) @ rot.T + center + rng.normal(0.0, shift, size=2)


def render(strokes: list[np.ndarray], width: int, height: int, pen_width: float, rng) -> GrayImage:
    """Rasterize polylines as dark anti-aliased strokes on a lightly noisy white page."""
    yy, xx = np.mgrid[0:height, 0:width]
    pix = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
    dist = np.full(pix.shape[0], np.inf)
    for poly in strokes:
        pts = poly * np.array([width, height])
        a, b = pts[:-1], pts[1:]
        ab = b - a
        denom = np.maximum((ab**2).sum(axis=1), 1e-12)
        t = np.clip(((pix[:, None, :] - a[None]) * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
        closest = a[None] + t[..., None] * ab[None]
        d = np.sqrt(((pix[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)
        dist = np.minimum(dist, d)
    ink = np.clip(pen_width - dist + 0.5, 0.0, 1.0)
    paper = 255.0 - rng.uniform(0.0, 12.0, size=ink.shape)
    px = paper * (1.0 - ink) + rng.uniform(10.0, 40.0, size=ink.shape) * ink
    return GrayImage(np.round(px).reshape(height, width).astype(np.uint8))


def sample_genuine(template, rng, cfg: GeneratorConfig) -> GrayImage:
    strokes = [s + rng.normal(0.0, cfg.genuine_jitter, size=s.shape) for s in template]
    polys = [_polyline(s) for s in strokes]
    allpts = _affine(np.concatenate(polys), rng, cfg.genuine_rotation_deg, cfg.genuine_scale, cfg.genuine_shift)
    polys = np.split(allpts, np.cumsum([len(p) for p in polys])[:-1])
    return render(polys, cfg.width, cfg.height, cfg.pen_width_px, rng)


def sample_skilled(template, rng, cfg: GeneratorConfig) -> GrayImage:
    strokes = [s + rng.normal(0.0, cfg.skilled_jitter, size=s.shape) for s in template]
    if len(strokes) > 1 and rng.random() < cfg.stroke_drop_prob:
        strokes.pop(int(rng.integers(len(strokes))))
    if rng.random() < cfg.stroke_add_prob:
        strokes.append(_random_stroke(rng, 1))
    polys = [_polyline(s) for s in strokes]
    allpts = _affine(np.concatenate(polys), rng, cfg.skilled_rotation_deg, cfg.skilled_scale, cfg.skilled_shift)
    polys = np.split(allpts, np.cumsum([len(p) for p in polys])[:-1])
    return render(polys, cfg.width, cfg.height, cfg.pen_width_px, rng)


def generate_corpus(out_dir, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> list[SignatureRecord]:
    """Write PGM images plus ``manifest.tsv`` under ``out_dir``; return the records."""
    if min(cfg.n_users, cfg.n_genuine, cfg.n_skilled, cfg.width, cfg.height) < 1:
        raise ParameterError("all corpus counts and sizes must be positive")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create corpus directory {out}: {exc}") from exc
    records = []
    for user, child in enumerate(np.random.SeedSequence(seed).spawn(cfg.n_users)):
        rng = np.random.default_rng(child)
        template = make_template(rng)
        for kind, n, sampler in (("genuine", cfg.n_genuine, sample_genuine), ("skilled", cfg.n_skilled, sample_skilled)):
            for i in range(n):
                rel = f"u{user:03d}/{kind[0]}{i:02d}.pgm"
                write_pgm(out / rel, sampler(template, rng, cfg))
                records.append(SignatureRecord(rel, user, kind))
    write_manifest(out / MANIFEST_NAME, records)
    return records


# --- manifest ---------------------------------------------------------------


def write_manifest(path, records):
    lines = [f"{r.path}\t{r.user_id}\t{r.kind}\n" for r in records]
    atomic_write_text(path, "".join(lines))


def load_manifest(path) -> list[SignatureRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestParseError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            rel, user, kind = parts
            if kind not in KINDS:
                raise ManifestParseError(line_no, f"unknown kind {kind!r}")
            try:
                user_id = int(user)
            except ValueError:
                raise ManifestParseError(line_no, f"user id {user!r} is not an integer") from None
            records.append(SignatureRecord(rel, user_id, kind))
    genuine_users = {r.user_id for r in records if r.kind == "genuine"}
    for r in records:
        if r.kind == "skilled" and r.user_id not in genuine_users:
            raise DataError(f"skilled forgery {r.path} targets user {r.user_id} who has no genuine signatures")
    return records


# --- protocol splits --------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSizes:
    feature: int = 6
    svm_extra: int = 4
    wi_feature: int = 10
    wi_enroll: int = 10
    wi_fraction: float = 0.2
    min_test: int = 1


@dataclass
class ProtocolSplit:
    """One train/test partition. Users in ``test_genuine`` are the evaluated ones."""

    mode: str
    feature: dict[int, list[SignatureRecord]] = field(default_factory=dict)
    svm_extra: dict[int, list[SignatureRecord]] = field(default_factory=dict)
    test_genuine: dict[int, list[SignatureRecord]] = field(default_factory=dict)
    test_skilled: dict[int, list[SignatureRecord]] = field(default_factory=dict)

    @property
    def feature_users(self) -> list[int]:
        return sorted(self.feature)

    @property
    def eval_users(self) -> list[int]:
        return sorted(self.test_genuine)

    def enrollment(self, user: int) -> list[SignatureRecord]:
        """Genuine signatures used as SVM positives for ``user``."""
        return self.feature.get(user, []) + self.svm_extra[user]


def _by_user(records):
    gen, sk = {}, {}
    for r in records:
        (gen if r.kind == "genuine" else sk).setdefault(r.user_id, []).append(r)
    return gen, sk


def _tag(recs, tag):
    return [SignatureRecord(r.path, r.user_id, r.kind, tag) for r in recs]


def split_wd(records, sizes: ProtocolSizes = ProtocolSizes(), seed: int = 0) -> ProtocolSplit:
    rng = np.random.default_rng(seed)
    gen, sk = _by_user(records)
    split = ProtocolSplit("WD")
    need = sizes.feature + sizes.svm_extra + sizes.min_test
    for user in sorted(gen):
        g = gen[user]
        if len(g) < need:
            raise DataError(f"user {user} has {len(g)} genuine signatures, protocol needs {need}")
        order = rng.permutation(len(g))
        g = [g[i] for i in order]
        a, b = sizes.feature, sizes.feature + sizes.svm_extra
        split.feature[user] = _tag(g[:a], "feature")
        split.svm_extra[user] = _tag(g[a:b], "svm")
        split.test_genuine[user] = _tag(g[b:], "test")
        split.test_skilled[user] = _tag(sk.get(user, []), "test")
    return split


def split_wi(records, sizes: ProtocolSizes = ProtocolSizes(), seed: int = 0) -> tuple[ProtocolSplit, ProtocolSplit]:
    """Partition users into a small and a large fold; return both orientations.

    The first split learns features on the small fold and evaluates the
    large one; the second swaps the roles.
    """
    rng = np.random.default_rng(seed)
    gen, sk = _by_user(records)
    users = sorted(gen)
    if len(users) < 5:
        raise DataError(f"writer-independent protocol needs at least 5 users, got {len(users)}")
    n_small = max(1, int(round(sizes.wi_fraction * len(users))))
    perm = [users[i] for i in rng.permutation(len(users))]
    small, large = sorted(perm[:n_small]), sorted(perm[n_small:])
    shuffled = {u: [gen[u][i] for i in rng.permutation(len(gen[u]))] for u in users}

    def build(learn, evaluate):
        split = ProtocolSplit("WI")
        for u in learn:
            if len(shuffled[u]) < sizes.wi_feature:
                raise DataError(f"user {u} has {len(shuffled[u])} genuine signatures, feature learning needs {sizes.wi_feature}")
            split.feature[u] = _tag(shuffled[u][: sizes.wi_feature], "feature")
        for u in evaluate:
            need = sizes.wi_enroll + sizes.min_test
            if len(shuffled[u]) < need:
                raise DataError(f"user {u} has {len(shuffled[u])} genuine signatures, protocol needs {need}")
            split.svm_extra[u] = _tag(shuffled[u][: sizes.wi_enroll], "svm")
            split.test_genuine[u] = _tag(shuffled[u][sizes.wi_enroll :], "test")
            split.test_skilled[u] = _tag(sk.get(u, []), "test")
        return split

    return build(small, large), build(large, small)


def split_protocol(records, mode: str, sizes: ProtocolSizes = ProtocolSizes(), seed: int = 0) -> list[ProtocolSplit]:
    """WD yields one split, WI yields the two swapped folds of one repetition."""
    if mode == "WD":
        return [split_wd(records, sizes, seed)]
    if mode == "WI":
        return list(split_wi(records, sizes, seed))
    raise ParameterError(f"mode must be 'WD' or 'WI', got {mode!r}")
