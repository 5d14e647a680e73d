import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlse_osv.corpus import (
    MANIFEST_NAME,
    GeneratorConfig,
    ProtocolSizes,
    SignatureRecord,
    generate_corpus,
    load_manifest,
    split_protocol,
    split_wd,
    split_wi,
    write_manifest,
)
from mlse_osv.errors import DataError, ManifestParseError, ParameterError
from mlse_osv.preprocess import preprocess_gray, read_pgm


def _fake_records(n_users, n_genuine, n_skilled):
    recs = []
    for u in range(n_users):
        recs += [SignatureRecord(f"u{u}/g{i}.pgm", u, "genuine") for i in range(n_genuine)]
        recs += [SignatureRecord(f"u{u}/s{i}.pgm", u, "skilled") for i in range(n_skilled)]
    return recs


# --- generation -------------------------------------------------------------


def test_record_count_and_layout(tmp_path):
    cfg = GeneratorConfig(n_users=20, n_genuine=10, n_skilled=10, width=24, height=16)
    records = generate_corpus(tmp_path, cfg, seed=3)
    assert len(records) == 400
    assert load_manifest(tmp_path / MANIFEST_NAME) == records
    img = read_pgm(tmp_path / records[0].path)
    assert (img.width, img.height) == (24, 16)
    assert np.median(img.pixels) > 200


def test_generation_is_byte_identical(tmp_path):
    cfg = GeneratorConfig(n_users=3, n_genuine=3, n_skilled=2)
    generate_corpus(tmp_path / "a", cfg, seed=8)
    generate_corpus(tmp_path / "b", cfg, seed=8)
    generate_corpus(tmp_path / "c", cfg, seed=9)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 3 * 5 + 1
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert any((tmp_path / "a" / rel).read_bytes() != (tmp_path / "c" / rel).read_bytes() for rel in files)


def test_generation_rejects_bad_counts(tmp_path):
    with pytest.raises(ParameterError):
        generate_corpus(tmp_path, GeneratorConfig(n_users=0))


def _ink(root, rec):
    img = read_pgm(root / rec.path)
    return preprocess_gray(img, img.width, img.height).pixels > 0


def _iou(a, b):
    return float((a & b).sum()) / max(1, int((a | b).sum()))


def test_skilled_forgeries_resemble_their_target(desk_corpus):
    root, records = desk_corpus
    ink = {r.path: _ink(root, r) for r in records}
    by = {}
    for r in records:
        by.setdefault((r.user_id, r.kind), []).append(r.path)
    users = sorted({r.user_id for r in records})
    same = [_iou(ink[g], ink[s]) for u in users for g in by[(u, "genuine")][:5] for s in by[(u, "skilled")][:5]]
    cross = [_iou(ink[g], ink[h]) for u, v in itertools.permutations(users, 2) for g in by[(u, "genuine")][:2] for h in by[(v, "genuine")][:2]]
    assert np.mean(same) > np.mean(cross)


# --- manifest ---------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    records = _fake_records(3, 2, 1)
    write_manifest(tmp_path / "m.tsv", records)
    assert load_manifest(tmp_path / "m.tsv") == records


def test_manifest_errors(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("a.pgm\t0\tgenuine\nb.pgm\t0\tfake\n")
    with pytest.raises(ManifestParseError, match="line 2") as info:
        load_manifest(path)
    assert info.value.line_no == 2
    path.write_text("a.pgm\tzero\tgenuine\n")
    with pytest.raises(ManifestParseError, match="line 1"):
        load_manifest(path)
    path.write_text("a.pgm\t0\n")
    with pytest.raises(ManifestParseError, match="line 1"):
        load_manifest(path)
    path.write_text("a.pgm\t0\tgenuine\nb.pgm\t4\tskilled\n")
    with pytest.raises(DataError, match="user 4"):
        load_manifest(path)


def test_empty_manifest(tmp_path):
    (tmp_path / "m.tsv").write_text("")
    assert load_manifest(tmp_path / "m.tsv") == []


# --- protocol splits --------------------------------------------------------


def test_wd_split_sizes_and_disjointness():
    records = _fake_records(5, 20, 10)
    split = split_wd(records, ProtocolSizes(), seed=4)
    for u in range(5):
        assert len(split.feature[u]) == 6
        assert len(split.svm_extra[u]) == 4
        assert len(split.test_genuine[u]) == 10
        assert len(split.test_skilled[u]) == 10
        train = {r.path for r in split.enrollment(u)}
        test = {r.path for r in split.test_genuine[u]}
        assert len(train) == 10 and not train & test
        assert all(r.kind == "skilled" for r in split.test_skilled[u])
    assert split.feature_users == split.eval_users == list(range(5))


def test_wd_split_is_seeded():
    records = _fake_records(4, 12, 2)
    assert split_wd(records, seed=1) == split_wd(records, seed=1)
    assert split_wd(records, seed=1) != split_wd(records, seed=2)


def test_wd_split_needs_enough_genuine():
    with pytest.raises(DataError, match="user 0"):
        split_wd(_fake_records(2, 10, 1))


def test_wi_folds():
    records = _fake_records(20, 20, 10)
    evaluations = []
    for rep in range(5):
        first, second = split_wi(records, ProtocolSizes(), seed=rep)
        assert len(first.feature_users) == 4 and len(first.eval_users) == 16
        assert len(second.feature_users) == 16 and len(second.eval_users) == 4
        assert first.feature_users == second.eval_users
        for split in (first, second):
            assert not set(split.feature_users) & set(split.eval_users)
            for u in split.eval_users:
                assert len(split.enrollment(u)) == 10
                assert not {r.path for r in split.enrollment(u)} & {r.path for r in split.test_genuine[u]}
            for u in split.feature_users:
                assert len(split.feature[u]) == 10
        evaluations += [first, second]
    assert len(evaluations) == 10


def test_wi_needs_five_users():
    with pytest.raises(DataError):
        split_wi(_fake_records(4, 20, 1))


def test_split_protocol_modes():
    records = _fake_records(5, 12, 1)
    assert len(split_protocol(records, "WD")) == 1
    assert len(split_protocol(records, "WI")) == 2
    with pytest.raises(ParameterError):
        split_protocol(records, "XX")


@settings(max_examples=40, deadline=None)
@given(n_users=st.integers(5, 12), n_genuine=st.integers(11, 25), seed=st.integers(0, 2**32 - 1))
def test_wd_split_partitions_each_user(n_users, n_genuine, seed):
    records = _fake_records(n_users, n_genuine, 2)
    split = split_wd(records, seed=seed)
    for u in range(n_users):
        parts = [split.feature[u], split.svm_extra[u], split.test_genuine[u]]
        paths = [r.path for part in parts for r in part]
        assert sorted(paths) == sorted(f"u{u}/g{i}.pgm" for i in range(n_genuine))
