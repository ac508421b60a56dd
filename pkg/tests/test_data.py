import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from bridgeda.data import (
    NO_LABEL,
    CsvFormatError,
    CsvSchema,
    DomainSamples,
    MoonsManifest,
    build_sequence,
    load_csv,
    make_two_moons,
    sample_union_batch,
    save_csv,
    sequence_from_manifest,
    subsequence,
    transform_domain,
)


def test_first_noiseless_point():
    s = make_two_moons(10, 0.0, seed=0)
    np.testing.assert_array_equal(s.X[0], [1.0, 0.0])


def test_class_counts():
    s = make_two_moons(50, 0.1, seed=3)
    assert len(s) == 100
    assert (s.y == 0).sum() == 50 and (s.y == 1).sum() == 50


def test_noiseless_arcs():
    s = make_two_moons(40, 0.0, seed=0)
    up, low = s.X[s.y == 0], s.X[s.y == 1]
    assert np.max(np.abs(np.hypot(up[:, 0], up[:, 1]) - 1)) < 1e-12
    assert np.all(up[:, 1] >= -1e-12)
    assert np.max(np.abs(np.hypot(low[:, 0] - 1, low[:, 1] - 0.5) - 1)) < 1e-12
    assert np.all(low[:, 1] <= 0.5 + 1e-12)


def test_moons_deterministic():
    a, b = make_two_moons(30, 0.2, seed=5), make_two_moons(30, 0.2, seed=5)
    assert np.array_equal(a.X, b.X)
    assert not np.array_equal(a.X, make_two_moons(30, 0.2, seed=6).X)


def test_moons_preconditions():
    with pytest.raises(ValueError):
        make_two_moons(0, 0.1, seed=0)
    with pytest.raises(ValueError):
        make_two_moons(5, -1.0, seed=0)


def test_transform_identity_at_zero():
    s = make_two_moons(20, 0.1, seed=1)
    np.testing.assert_allclose(transform_domain(s, 0, 3.0).X, s.X, rtol=0, atol=0)


def test_transform_quarter_turn():
    s = DomainSamples(np.array([[1.0, 0.0]]), [0], [0])
    np.testing.assert_allclose(transform_domain(s, 90, 2.5).X, [[2.5, -1.0]], atol=1e-15)
    np.testing.assert_allclose(transform_domain(s, 90, 2.5, clockwise=False).X, [[2.5, 1.0]], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-360, 360), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_transform_is_isometry(angle, coeff, seed):
    X = np.random.default_rng(seed).normal(size=(12, 2)) * 3
    s = DomainSamples(X, np.zeros(12), np.zeros(12))
    out = transform_domain(s, angle, coeff)
    np.testing.assert_allclose(pdist(out.X), pdist(X), rtol=1e-12, atol=1e-12)
    assert np.array_equal(out.y, s.y) and np.array_equal(out.domain, s.domain)


def test_transform_needs_2d():
    with pytest.raises(ValueError):
        transform_domain(DomainSamples(np.zeros((3, 3)), np.zeros(3), np.zeros(3)), 30, 1.0)


def test_sequence_shapes():
    seq = build_sequence([0, 90], seed=0)
    assert seq.M == 0 and seq.names == ["0", "90"]
    seq = build_sequence([0, 30, 60, 90], seed=0)
    assert seq.M == 2 and len(seq) == 4
    assert seq[0].labeled and not any(d.labeled for d in seq.domains[1:])
    for k, d in enumerate(seq.domains):
        assert len(d.train) == 320 and len(d.test) == 80
        assert np.all(d.train.domain == k)


def test_test_split_disjoint_from_train():
    seq = build_sequence([0, 45], noise_sd=0.0, seed=2)
    for d in seq.domains:
        rows = {tuple(r) for r in d.train.X}
        assert not any(tuple(r) in rows for r in d.test.X)


def test_domains_are_independent_draws():
    seq = build_sequence([0, 0.0001], seed=0)
    # nearly the same transform, so any shared noise would show up as near-identical points
    assert np.abs(seq[0].train.X[:10] - seq[1].train.X[:10]).max() > 1e-3


def test_unsorted_angles_rejected():
    with pytest.raises(ValueError, match="angles"):
        build_sequence([0, 60, 30])
    with pytest.raises(ValueError, match="angles"):
        build_sequence([10, 30])


def test_target_labels_hidden_from_training():
    seq = build_sequence([0, 90], seed=0)
    assert len(seq.train_labels(0)) == len(seq[0].train)
    with pytest.raises(PermissionError):
        seq.train_labels(1)


def test_manifest_round_trip_regenerates():
    seq = build_sequence([0, 30, 90], n_per_class=20, seed=4)
    again = sequence_from_manifest(json.loads(json.dumps(seq.manifest)))
    for a, b in zip(seq.domains, again.domains):
        assert np.array_equal(a.train.X, b.train.X) and np.array_equal(a.test.y, b.test.y)


def test_manifest_errors_name_the_field():
    doc = MoonsManifest().to_dict()
    with pytest.raises(ValueError, match="noise_sd"):
        MoonsManifest.from_dict(dict(doc, noise_sd="lots"))
    with pytest.raises(ValueError, match="n_per_class"):
        MoonsManifest.from_dict(dict(doc, n_per_class=0))


def test_subsequence_renumbers():
    seq = build_sequence([0, 30, 60, 90], n_per_class=10, seed=0)
    sub = subsequence(seq, [0, 2, 3])
    assert sub.names == ["0", "60", "90"]
    assert np.all(sub[1].train.domain == 1) and np.array_equal(sub[1].train.X, seq[2].train.X)


# ---------------------------------------------------------------- sampling


def test_single_precedent_is_pure_source():
    seq = build_sequence([0, 30, 90], n_per_class=20, seed=0)
    u, d = sample_union_batch(seq, 1, 16, "per-domain", np.random.default_rng(0))
    src = {tuple(r) for r in seq[0].train.X}
    assert u.shape == d.shape == (16, 2)
    assert all(tuple(r) in src for r in u)
    assert all(tuple(r) in {tuple(r) for r in seq[1].train.X} for r in d)


def _domain_of(rows, seq):
    lookup = {tuple(r): k for k, dom in enumerate(seq.domains) for r in dom.train.X}
    return np.array([lookup[tuple(r)] for r in rows])


def test_per_domain_stratification_exact():
    seq = build_sequence([0, 20, 40, 60], n_per_class=20, seed=0)
    u, _ = sample_union_batch(seq, 3, 30, "per-domain", np.random.default_rng(1))
    assert np.bincount(_domain_of(u, seq), minlength=3).tolist() == [10, 10, 10]


def test_per_domain_remainder_differs_by_one():
    seq = build_sequence([0, 20, 40, 60], n_per_class=20, seed=0)
    u, _ = sample_union_batch(seq, 3, 32, "per-domain", np.random.default_rng(1))
    counts = np.bincount(_domain_of(u, seq), minlength=3)
    assert counts.sum() == 32 and counts.max() - counts.min() <= 1


def test_pooled_frequencies_follow_domain_sizes():
    a = build_sequence([0, 30], n_per_class=50, seed=0)
    b = build_sequence([0, 30], n_per_class=10, seed=1)
    seq = type(a)([a[0], type(a[1])(b[1].name, b[1].train, b[1].test, False), a[1]])
    seq.domains[1].train.domain[:] = 1
    rng = np.random.default_rng(7)
    n = 100_000
    u, _ = sample_union_batch(seq, 2, n, "pooled", rng)
    counts = np.bincount(_domain_of(u, seq), minlength=2)
    p = len(seq[0].train) / (len(seq[0].train) + len(seq[1].train))
    sd = np.sqrt(n * p * (1 - p))
    assert abs(counts[0] - n * p) < 3 * sd


def test_sampler_rejects_bad_index_and_mode():
    seq = build_sequence([0, 90], n_per_class=5, seed=0)
    with pytest.raises(ValueError):
        sample_union_batch(seq, 2, 4, "per-domain", np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_union_batch(seq, 1, 4, "weird", np.random.default_rng(0))


# ---------------------------------------------------------------- CSV


def test_csv_small_file(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label,domain\n1,2,0,0\n3,4,1,0\n5,6,,1\n")
    s = load_csv(p)
    assert len(s) == 3 and s.dim == 2
    assert s.y.tolist() == [0, 1, NO_LABEL]


def test_csv_missing_domain(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,2,0\n")
    with pytest.raises(CsvFormatError, match="domain"):
        load_csv(p)


@pytest.mark.parametrize("body,line", [
    ("a,b,domain\n1,2,0\n3,0\n", 3),
    ("a,b,domain\n1,2,0\n1,2,0\nx,2,0\n", 4),
])
def test_csv_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "t.csv"
    p.write_text(body)
    with pytest.raises(CsvFormatError) as info:
        load_csv(p)
    assert info.value.line == line and f"line {line}" in str(info.value)


def test_csv_unknown_column_with_schema(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,zzz,domain\n1,2,3,0\n")
    with pytest.raises(CsvFormatError, match="zzz"):
        load_csv(p, CsvSchema(("a", "b")))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 4))
def test_csv_round_trip_bitwise(tmp_path_factory, seed, n, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k)) * 10.0 ** rng.integers(-8, 8, size=(n, k))
    y = np.where(rng.random(n) < 0.3, NO_LABEL, rng.integers(0, 3, n))
    s = DomainSamples(X, y, rng.integers(0, 4, n))
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    save_csv(s, p)
    back = load_csv(p)
    assert np.array_equal(back.X, s.X) and np.array_equal(back.y, s.y) and np.array_equal(back.domain, s.domain)
