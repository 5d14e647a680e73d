import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlse_osv.errors import DataError, DimensionError, ParameterError
from mlse_osv.neuralcore import desk_config, init_network
from mlse_osv.preprocess import GrayImage
from mlse_osv.verification import (
    FORGERY,
    GENUINE,
    SvmConfig,
    SvmModel,
    UserModel,
    balanced_accuracy,
    balanced_class_weights,
    build_user_model,
    combine_scores,
    encode_user_model,
    load_user_model,
    majority_vote,
    sample_random_forgeries,
    save_user_model,
    svm_objective,
    train_linear_svm,
    usmg_select,
    verify_query,
)


def _blobs(rng, n_pos=10, n_neg=100, d=8, gap=3.0):
    pos = rng.normal(0, 1, (n_pos, d)) + gap
    neg = rng.normal(0, 1, (n_neg, d)) - gap
    return pos, neg


def _users(rng, n_users=5, n_rows=10, d=6):
    return {u: rng.normal(u, 1.0, (n_rows, d)) for u in range(n_users)}


# --- linear SVM -------------------------------------------------------------


@pytest.mark.parametrize("solver", ["dcd", "pegasos"])
def test_separable_toy_has_no_training_errors(solver):
    pos = np.array([[1.0, 1.0], [2.0, 2.0]])
    neg = np.array([[-1.0, -1.0], [-2.0, -2.0]])
    svm = train_linear_svm(pos, neg, solver=solver, seed=0)
    assert np.all(svm.decision(pos) > 0)
    assert np.all(svm.decision(neg) < 0)


def test_class_weight_ratio():
    c_pos, c_neg = balanced_class_weights(10, 100)
    assert c_pos / c_neg == 10
    assert c_pos * 10 + c_neg * 100 == 110
    svm = train_linear_svm(np.ones((10, 2)), -np.ones((100, 2)))
    assert svm.class_weights[0] / svm.class_weights[1] == 10


@given(n_pos=st.integers(1, 500), n_neg=st.integers(1, 500))
def test_class_weights_are_inverse_to_class_size(n_pos, n_neg):
    c_pos, c_neg = balanced_class_weights(n_pos, n_neg)
    assert c_pos / c_neg == pytest.approx(n_neg / n_pos, rel=1e-15)
    assert c_pos * n_pos == pytest.approx(c_neg * n_neg, rel=1e-15)


def test_label_flip_negates_decision(rng):
    pos, neg = _blobs(rng, gap=0.6)
    a = train_linear_svm(pos, neg, seed=4)
    b = train_linear_svm(neg, pos, seed=4)
    x = rng.normal(0, 2, (50, pos.shape[1]))
    scale = np.abs(a.decision(x)).max()
    np.testing.assert_allclose(a.decision(x), -b.decision(x), atol=1e-3 * scale)


def test_dcd_reaches_a_lower_objective_than_pegasos(rng):
    pos, neg = _blobs(rng, gap=0.5)
    dcd = train_linear_svm(pos, neg, seed=1)
    peg = train_linear_svm(pos, neg, seed=1, solver="pegasos")
    assert svm_objective(dcd, pos, neg) <= svm_objective(peg, pos, neg)


def test_svm_is_seeded(rng):
    pos, neg = _blobs(rng, gap=0.5)
    a, b = train_linear_svm(pos, neg, seed=7), train_linear_svm(pos, neg, seed=7)
    assert np.array_equal(a.w, b.w) and a.b == b.b


def test_svm_input_errors():
    with pytest.raises(DataError):
        train_linear_svm(np.zeros((0, 2)), np.ones((3, 2)))
    with pytest.raises(DimensionError):
        train_linear_svm(np.zeros((2, 2)), np.ones((3, 3)))
    with pytest.raises(ParameterError):
        train_linear_svm(np.zeros((2, 2)), np.ones((3, 2)), solver="qp")
    with pytest.raises(DimensionError):
        SvmModel(np.zeros(3), 0.0).decision(np.zeros((1, 4)))


# --- random forgeries -------------------------------------------------------


def test_forgery_sampling(rng):
    feats = {u: np.full((10, 3), float(u)) for u in range(12)}
    sample = sample_random_forgeries(4, feats, 10, np.random.default_rng(1))
    assert sample.shape == (100, 3)
    assert not np.any(sample[:, 0] == 4.0)
    again = sample_random_forgeries(4, feats, 10, np.random.default_rng(1))
    assert np.array_equal(sample, again)


def test_forgery_sampling_small_pool_uses_replacement():
    feats = {0: np.zeros((10, 2)), 1: np.ones((3, 2))}
    sample = sample_random_forgeries(0, feats, 10, np.random.default_rng(0))
    assert sample.shape == (100, 2) and np.all(sample == 1)


def test_forgery_sampling_without_replacement_when_possible():
    feats = {0: np.zeros((2, 1)), **{u: np.arange(u * 10, u * 10 + 10, dtype=float)[:, None] for u in (1, 2, 3)}}
    sample = sample_random_forgeries(0, feats, 10, np.random.default_rng(0))
    assert len(np.unique(sample)) == 20


def test_forgery_sampling_needs_other_users():
    with pytest.raises(DataError):
        sample_random_forgeries(0, {0: np.zeros((3, 2))}, 10, np.random.default_rng(0))


# --- user models and selection ----------------------------------------------


def test_build_user_model(rng):
    per_snap = [_users(np.random.default_rng(s)) for s in range(6)]
    genuine = [p[2] for p in per_snap]
    a = build_user_model(2, genuine, per_snap, np.random.default_rng(3))
    b = build_user_model(2, genuine, per_snap, np.random.default_rng(3))
    assert len(a.svms) == 6 and a.selected_index is None
    for x, y in zip(a.svms, b.svms):
        assert np.array_equal(x.w, y.w) and x.b == y.b
    bad = list(genuine)
    bad[3] = np.zeros((10, 4))
    with pytest.raises(DimensionError):
        build_user_model(2, bad, per_snap, np.random.default_rng(3))


def test_usmg_identical_svms_pick_index_zero(rng):
    users = _users(rng)
    svm = train_linear_svm(users[1], np.vstack([users[0], users[2]]))
    model = UserModel(1, [svm] * 6)
    assert usmg_select(model, [users[1]] * 6, [users] * 6, np.random.default_rng(0)) == 0
    assert len(set(model.usmg_scores)) == 1


def test_usmg_picks_the_uniformly_best_svm(rng):
    users = _users(rng, d=4)
    good = train_linear_svm(users[3], np.vstack([users[u] for u in users if u != 3]))
    useless = SvmModel(np.zeros(4), -1.0)
    model = UserModel(3, [useless] * 4 + [good, useless])
    assert usmg_select(model, [users[3]] * 6, [users] * 6, np.random.default_rng(0)) == 4
    assert model.selected_index == 4


def test_usmg_is_deterministic(rng):
    per_snap = [_users(np.random.default_rng(s)) for s in range(6)]
    genuine = [p[0] for p in per_snap]
    model = build_user_model(0, genuine, per_snap, np.random.default_rng(1))
    picks = {usmg_select(model, genuine, per_snap, np.random.default_rng(9)) for _ in range(3)}
    assert len(picks) == 1 and 0 <= picks.pop() < 6


def test_usmg_without_dropout_reduces_to_clean_accuracy():
    # the other users hold exactly 10x the genuine count, so every draw sees the same rows
    rng = np.random.default_rng(2)
    d = 5
    users = {0: rng.normal(0.4, 1, (4, d)), **{u: rng.normal(0, 1, (10, d)) for u in range(1, 5)}}
    svms = [SvmModel(rng.normal(size=d), float(rng.normal())) for _ in range(6)]
    negatives = np.vstack([users[u] for u in range(1, 5)])
    clean = [balanced_accuracy(s, users[0], negatives) for s in svms]
    model = UserModel(0, svms)
    cfg = SvmConfig(usmg_dropout=0.0)
    assert usmg_select(model, [users[0]] * 6, [users] * 6, np.random.default_rng(0), cfg) == int(np.argmax(clean))
    np.testing.assert_allclose(model.usmg_scores, np.array(clean) * cfg.usmg_iterations)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), perm=st.permutations(range(6)))
def test_usmg_selection_follows_content_not_position(seed, perm):
    rng = np.random.default_rng(seed)
    users = {u: rng.normal(0.3 * u, 1, (6, 4)) for u in range(4)}
    svms = [SvmModel(rng.normal(size=4), float(rng.normal())) for _ in range(6)]
    base = UserModel(0, svms)
    usmg_select(base, [users[0]] * 6, [users] * 6, np.random.default_rng(seed))
    if len(set(base.usmg_scores)) < 6:
        return
    shuffled = UserModel(0, [svms[i] for i in perm])
    usmg_select(shuffled, [users[0]] * 6, [users] * 6, np.random.default_rng(seed))
    assert perm[shuffled.selected_index] == base.selected_index


# --- combiners --------------------------------------------------------------


def test_majority_vote_examples():
    g, f = 1.0, -1.0
    assert majority_vote([g, g, g, g, f, f]) == GENUINE
    assert majority_vote([g, g, g, f, f, f]) == FORGERY
    assert majority_vote([f] * 6) == FORGERY


def test_combine_scores(rng):
    svms = [SvmModel(np.array([1.0]), b) for b in (-3.0, -2.0, -1.0, 1.0, 2.0, 3.0)]
    model = UserModel(0, svms, selected_index=4)
    feats = [np.array([[0.5]])] * 6
    score, accept = combine_scores(model, feats, "usmg")
    assert score.tolist() == [2.5] and accept.tolist() == [True]
    score, accept = combine_scores(model, feats, "mv")
    assert score.tolist() == [0.5] and accept.tolist() == [False]
    score, _ = combine_scores(model, feats, "single:0")
    assert score.tolist() == [-2.5]
    with pytest.raises(ParameterError):
        combine_scores(model, feats, "vote")
    with pytest.raises(ParameterError):
        combine_scores(UserModel(0, svms), feats, "usmg")


@pytest.fixture(scope="module")
def tiny_system():
    snapshots = [init_network(desk_config(4), s) for s in range(2)]
    image = GrayImage(np.where(np.random.default_rng(0).random((32, 32)) < 0.1, 0, 255).astype(np.uint8))
    rng = np.random.default_rng(1)
    svms = [SvmModel(rng.normal(size=128), 0.0) for _ in snapshots]
    return snapshots, image, UserModel(0, svms, selected_index=1)


def test_verify_query_is_deterministic(tiny_system):
    snapshots, image, model = tiny_system
    for combiner in ("usmg", "mv"):
        first = verify_query(model, image, snapshots, combiner)
        assert verify_query(model, image, snapshots, combiner) == first
        assert first[1] in (GENUINE, FORGERY)


def test_infinite_threshold_always_rejects(tiny_system):
    snapshots, image, model = tiny_system
    strict = UserModel(model.user_id, model.svms, model.selected_index, threshold=float("inf"))
    assert verify_query(strict, image, snapshots, "usmg")[1] == FORGERY


def test_user_model_round_trip(tmp_path, rng):
    users = _users(rng)
    model = build_user_model(1, [users[1]] * 6, [users] * 6, np.random.default_rng(0))
    usmg_select(model, [users[1]] * 6, [users] * 6, np.random.default_rng(0))
    model.threshold = -0.25
    save_user_model(model, tmp_path / "u.mlsv")
    loaded = load_user_model(tmp_path / "u.mlsv")
    assert loaded.selected_index == model.selected_index and loaded.threshold == -0.25
    assert loaded.usmg_scores == model.usmg_scores
    x = rng.normal(size=(7, 6))
    assert np.array_equal(loaded.decisions([x] * 6), model.decisions([x] * 6))
    assert encode_user_model(loaded) == encode_user_model(model)
