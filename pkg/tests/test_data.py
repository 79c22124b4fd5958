import numpy as np
import pytest

from mmdcvae.data import (
    Dataset,
    Scaler,
    SyntheticSpec,
    load_csv,
    load_matrix_csv,
    split_holdout,
    standardize,
    synth_shift,
    write_csv,
    write_matrix_csv,
)
from mmdcvae.errors import ContractError, ParseError, SchemaError


def small_dataset():
    return Dataset(
        x=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
        condition=np.array([0, 1, 0]),
        domain=np.array([0, 0, 1]),
        feature_names=["a", "b"],
        condition_names=["ctrl", "stim"],
        domain_names=["d0", "d1"],
    )


# ---- CSV ---------------------------------------------------------------------


def test_load_csv_shapes_and_labels(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("g1,g2,condition,domain\n1.0,2.0,ctrl,d0\n3.5,4.0,stim,d0\n0.5,1.5,ctrl,d1\n")
    ds = load_csv(path)
    assert ds.x.shape == (3, 2)
    assert ds.feature_names == ["g1", "g2"]
    np.testing.assert_array_equal(ds.condition, [0, 1, 0])
    assert ds.condition_names == ["ctrl", "stim"]
    np.testing.assert_array_equal(ds.domain, [0, 0, 1])


def test_load_csv_first_appearance_order(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f,condition,domain\n1,z_cond,d\n2,a_cond,d\n3,z_cond,d\n")
    ds = load_csv(path)
    assert ds.condition_names == ["z_cond", "a_cond"]
    np.testing.assert_array_equal(ds.condition, [0, 1, 0])


def test_load_csv_missing_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f,condition\n1,x\n")
    with pytest.raises(SchemaError, match="domain"):
        load_csv(path)


def test_load_csv_bad_cell_reports_position(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f,condition,domain\n1.0,c,d\noops,c,d\n")
    with pytest.raises(ParseError, match=r":3"):
        load_csv(path)


def test_load_csv_rejects_ragged_row(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f,g,condition,domain\n1.0,2.0,c,d\n1.0,c,d\n")
    with pytest.raises(ParseError, match="expected 4 cells"):
        load_csv(path)


def test_load_csv_rejects_non_finite(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f,condition,domain\nnan,c,d\n")
    with pytest.raises(ParseError, match="non-finite"):
        load_csv(path)


def test_csv_round_trip_is_identical(tmp_path):
    rng = np.random.default_rng(17)
    ds = Dataset(
        x=rng.normal(size=(20, 4)) * 10.0 ** rng.integers(-8, 8, size=(20, 4)),
        condition=rng.integers(0, 2, size=20),
        domain=rng.integers(0, 3, size=20),
        feature_names=["w", "x", "y", "z"],
        condition_names=["ctrl", "stim"],
        domain_names=["a", "b", "c"],
    )
    path = tmp_path / "round.csv"
    write_csv(ds, path)
    again = load_csv(path)
    assert np.array_equal(ds.x, again.x)
    np.testing.assert_array_equal(ds.condition, again.condition)
    np.testing.assert_array_equal(ds.domain, again.domain)
    assert again.feature_names == ds.feature_names
    assert again.condition_names == ds.condition_names


def test_matrix_csv_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    x = rng.normal(size=(5, 3))
    path = tmp_path / "m.csv"
    write_matrix_csv(x, ["a", "b", "c"], path)
    back, names = load_matrix_csv(path)
    assert np.array_equal(back, x)
    assert names == ["a", "b", "c"]


# ---- synthetic benchmark -------------------------------------------------------


def test_synth_shift_is_bit_identical_for_same_spec():
    spec = SyntheticSpec(dims=10, samples_per_cell=8, seed=5)
    a, truth_a = synth_shift(spec)
    b, truth_b = synth_shift(spec)
    assert np.array_equal(a.x, b.x)
    for key in truth_a:
        assert np.array_equal(truth_a[key]["mean"], truth_b[key]["mean"])


def test_synth_shift_counts_and_labels():
    spec = SyntheticSpec(domain_count=3, condition_count=2, dims=6, samples_per_cell=10, seed=1)
    ds, truth = synth_shift(spec)
    assert len(ds) == 3 * 2 * 10
    assert ds.n_features == 6
    assert set(truth) == {(d, s) for d in range(3) for s in range(2)}
    for d in range(3):
        for s in range(2):
            assert np.sum((ds.domain == d) & (ds.condition == s)) == 10


def test_synth_shift_zero_magnitude_means_match():
    spec = SyntheticSpec(
        domain_count=2, condition_count=2, dims=20, samples_per_cell=4000,
        shift_magnitude=0.0, noise_sd=0.2, seed=7,
    )
    ds, truth = synth_shift(spec)
    for d in range(2):
        np.testing.assert_array_equal(truth[(d, 0)]["mean"], truth[(d, 1)]["mean"])
        m0 = ds.x[(ds.domain == d) & (ds.condition == 0)].mean(axis=0)
        m1 = ds.x[(ds.domain == d) & (ds.condition == 1)].mean(axis=0)
        sd = np.sqrt(truth[(d, 0)]["var"])
        assert np.all(np.abs(m0 - m1) < 2 * 4 * sd / np.sqrt(4000))


def test_synth_shift_response_shared_across_domains():
    spec = SyntheticSpec(domain_count=2, condition_count=2, dims=12, samples_per_cell=5, seed=9)
    _, truth = synth_shift(spec)
    # mean difference between conditions is scale*domain_mean + shift; the shift
    # and scale are shared, so the response reconstructed from each domain agrees
    resp0 = truth[(0, 1)]["mean"] - truth[(0, 0)]["mean"]
    resp1 = truth[(1, 1)]["mean"] - truth[(1, 0)]["mean"]
    ratio0 = truth[(0, 1)]["var"] / truth[(0, 0)]["var"]
    ratio1 = truth[(1, 1)]["var"] / truth[(1, 0)]["var"]
    assert not np.array_equal(resp0, resp1)  # domain means differ
    np.testing.assert_allclose(ratio0, ratio1, rtol=1e-9)


def test_synth_shift_sample_means_match_truth():
    spec = SyntheticSpec(domain_count=2, condition_count=2, dims=15, samples_per_cell=5000, seed=11)
    ds, truth = synth_shift(spec)
    for d in range(2):
        for s in range(2):
            cell = ds.x[(ds.domain == d) & (ds.condition == s)]
            sd = np.sqrt(truth[(d, s)]["var"])
            assert np.all(np.abs(cell.mean(axis=0) - truth[(d, s)]["mean"]) < 4 * sd / np.sqrt(5000))
            np.testing.assert_allclose(cell.var(axis=0, ddof=1), truth[(d, s)]["var"], rtol=0.2)


def test_synth_spec_validation():
    with pytest.raises(ContractError):
        SyntheticSpec(response_sparsity=0.0)
    with pytest.raises(ContractError):
        SyntheticSpec(noise_sd=0.0)
    with pytest.raises(ContractError):
        SyntheticSpec(domain_count=0)


# ---- holdout splitting -----------------------------------------------------------


def test_split_holdout_empty_plan():
    ds = small_dataset()
    train, held = split_holdout(ds, [])
    assert len(train) == 3
    assert len(held) == 0


def test_split_holdout_exact_partition():
    spec = SyntheticSpec(domain_count=3, condition_count=2, dims=4, samples_per_cell=6, seed=2)
    ds, _ = synth_shift(spec)
    train, held = split_holdout(ds, [(2, 1)])
    assert len(train) + len(held) == len(ds)
    assert not np.any((train.domain == 2) & (train.condition == 1))
    assert np.all(held.domain == 2)
    assert np.all(held.condition == 1)
    assert len(held) == 6


def test_split_holdout_preserves_row_order():
    spec = SyntheticSpec(domain_count=2, condition_count=2, dims=3, samples_per_cell=4, seed=3)
    ds, _ = synth_shift(spec)
    train, _ = split_holdout(ds, [(1, 1)])
    kept = ~((ds.domain == 1) & (ds.condition == 1))
    assert np.array_equal(train.x, ds.x[kept])


def test_split_holdout_rejects_emptying_a_domain():
    ds = small_dataset()
    # domain d1 only has a single (d=1, s=0) row; removing it strands the domain
    with pytest.raises(ContractError, match="d1"):
        split_holdout(ds, [(1, 0)])


def test_split_holdout_rejects_empty_training_set():
    ds = small_dataset()
    with pytest.raises(ContractError):
        split_holdout(ds, [(0, 0), (0, 1), (1, 0)])


def test_split_does_not_mutate_values():
    ds = small_dataset()
    before = ds.x.copy()
    split_holdout(ds, [(0, 1)])
    assert np.array_equal(ds.x, before)


# ---- standardization ----------------------------------------------------------


def test_standardize_round_trip():
    ds = small_dataset()
    std, scaler = standardize(ds)
    np.testing.assert_allclose(std.x.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(std.x.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(scaler.inverse(std.x), ds.x, atol=1e-12)


def test_standardize_constant_feature():
    ds = Dataset(
        x=np.array([[1.0, 5.0], [1.0, 7.0]]),
        condition=np.array([0, 1]),
        domain=np.array([0, 0]),
        feature_names=["c", "v"],
        condition_names=["a", "b"],
        domain_names=["d"],
    )
    std, scaler = standardize(ds)
    assert scaler.scale[0] == 1.0
    assert np.all(np.isfinite(std.x))


def test_scaler_identity():
    s = Scaler.identity(3)
    x = np.random.default_rng(0).normal(size=(2, 3))
    assert np.array_equal(s.transform(x), x)
    assert np.array_equal(s.inverse(x), x)
