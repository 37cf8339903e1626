import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchnet.attribution import (
    EXACT_MAX_DIMS,
    AttributionConfig,
    ShapleyMatrix,
    attribute_dataset,
    coalition_values,
    export_beeswarm,
    export_importance,
    make_background,
    rank_features,
    shapley_exact,
    shapley_permutation,
)
from touchnet.cli import _prepare
from touchnet.datamodel import N_CODES, TOUCHPOINT_CODES, TOUCHPOINT_NAMES
from touchnet.mlp import Architecture, init_params
from touchnet.trainer import EnsembleModel, InputTransform, TrainConfig, TrainedModel, ensemble_predict, load_ensemble

from conftest import make_dataset
from oracles import coalition_shapley


def random_game(seed, d):
    """A smooth nonlinear f on R^d with pairwise products, plus x and a background."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, 4))
    c = rng.normal(size=4)
    w = rng.normal(size=4)
    P = np.triu(rng.normal(size=(d, d)), 1) * 0.3

    def f(Z):
        Z = np.atleast_2d(Z)
        return np.tanh(Z @ A + c) @ w + np.einsum("ni,ij,nj->n", Z, P, Z)

    x = rng.normal(size=d)
    bg = rng.normal(size=(int(rng.integers(1, 12)), d))
    return f, x, bg


def model_ensemble(members):
    cfg = TrainConfig(epochs=1, K=len(members), seeds=tuple(range(len(members))), input_transform="none")
    wrapped = [TrainedModel(p, best_epoch=0, best_val_auroc=0.5, seed=k) for k, p in enumerate(members)]
    return EnsembleModel(wrapped, 0.5, InputTransform("none"), cfg)


def random_ensemble(seed, k=2):
    rng = np.random.default_rng(seed)
    members = []
    for j in range(k):
        p = init_params(Architecture(), seed + j)
        for b in p.biases:
            b[:] = rng.normal(size=b.shape)
        members.append(p)
    return model_ensemble(members)


def matrix_of(values):
    values = np.asarray(values, dtype=float)
    n, d = values.shape
    return ShapleyMatrix(values, 0.0, values.sum(axis=1), np.zeros((n, d)), np.zeros(n))


# ---------------------------------------------------------------- exact enumeration


def test_linear_closed_form():
    rng = np.random.default_rng(0)
    w, x, bg = rng.normal(size=5), rng.normal(size=5), rng.normal(size=(9, 5))
    phi = shapley_exact(lambda Z: Z @ w + 3.0, x, bg)
    np.testing.assert_allclose(phi, w * (x - bg.mean(axis=0)), atol=1e-12)


def test_product_of_three_splits_evenly():
    f = lambda Z: Z[:, 0] * Z[:, 1] * Z[:, 2]
    phi = shapley_exact(f, np.ones(3), np.zeros((1, 3)))
    np.testing.assert_allclose(phi, [1 / 3] * 3, atol=1e-15)


@pytest.mark.parametrize("seed", range(12))
def test_exact_matches_subset_oracle(seed):
    d = 2 + seed % 5
    f, x, bg = random_game(seed, d)
    np.testing.assert_allclose(shapley_exact(f, x, bg), coalition_shapley(f, x, bg), atol=1e-12)


def test_active_dims_hold_the_rest_at_x():
    f, x, bg = random_game(3, 6)
    active = [0, 2, 5]

    def reduced(Z):
        full = np.tile(x, (Z.shape[0], 1))
        full[:, active] = Z
        return f(full)

    want = coalition_shapley(reduced, x[active], bg[:, active])
    np.testing.assert_allclose(shapley_exact(f, x, bg, active_dims=active), want, atol=1e-12)


def test_coalition_values_endpoints():
    f, x, bg = random_game(4, 4)
    v, _ = coalition_values(f, x, bg)
    assert v[0] == pytest.approx(f(bg).mean(), abs=1e-13)
    assert v[-1] == pytest.approx(f(x)[0], abs=1e-13)


def test_exact_cap():
    d = EXACT_MAX_DIMS + 1
    with pytest.raises(ValueError, match="shapley_permutation"):
        shapley_exact(lambda Z: Z.sum(axis=1), np.zeros(d), np.zeros((1, d)))
    # a capped subset of a wide input is fine
    phi = shapley_exact(lambda Z: Z.sum(axis=1), np.ones(d), np.zeros((1, d)), active_dims=range(3))
    np.testing.assert_allclose(phi, 1.0)


def test_background_shape_checked():
    with pytest.raises(ValueError):
        shapley_exact(lambda Z: Z.sum(axis=1), np.zeros(3), np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 8))
def test_efficiency(seed, d):
    f, x, bg = random_game(seed, d)
    phi = shapley_exact(f, x, bg)
    assert abs(phi.sum() - (f(x)[0] - f(bg).mean())) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 8))
def test_symmetry(seed, d):
    f, x, bg = random_game(seed, d)

    def g(Z):
        # symmetric in features 0 and 1
        S = Z.copy()
        S[:, 1] = Z[:, 0]
        T = Z.copy()
        T[:, 0] = Z[:, 1]
        return f(S) + f(T)

    x = x.copy()
    x[1] = x[0]
    swapped = bg[:, [1, 0] + list(range(2, d))]
    phi = shapley_exact(g, x, np.vstack([bg, swapped]))
    assert abs(phi[0] - phi[1]) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 8), j=st.integers(0, 7))
def test_dummy(seed, d, j):
    j = j % d
    f, x, bg = random_game(seed, d)
    keep = [k for k in range(d) if k != j]

    def g(Z):
        Z = Z.copy()
        Z[:, j] = 0.0
        return f(Z)

    phi = shapley_exact(g, x, bg)
    assert abs(phi[j]) <= 1e-9
    assert np.all(np.isfinite(phi[keep]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 8), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(seed, d, a, b):
    f, x, bg = random_game(seed, d)
    g, _, _ = random_game(seed + 1, d)
    combo = shapley_exact(lambda Z: a * f(Z) + b * g(Z), x, bg)
    np.testing.assert_allclose(combo, a * shapley_exact(f, x, bg) + b * shapley_exact(g, x, bg), atol=1e-9)


# ---------------------------------------------------------------- permutation estimator


def test_permutation_close_to_exact_d8():
    f, x, _ = random_game(7, 8)
    bg = np.random.default_rng(1).normal(size=(16, 8))
    exact = shapley_exact(f, x, bg)
    est = shapley_permutation(f, x, bg, n_perm=2000, seed=0)
    assert np.max(np.abs(est - exact)) <= 0.01


def test_permutation_dummy_exactly_zero():
    f, x, bg = random_game(8, 6)
    g = lambda Z: f(np.c_[Z[:, :3], np.zeros(len(Z)), Z[:, 4:]])
    for kwargs in ({}, {"background_per_perm": 3}):
        est = shapley_permutation(g, x, bg, n_perm=25, seed=2, return_stderr=True, **kwargs)
        assert est.values[3] == 0.0 and est.stderr[3] == 0.0


def test_permutation_unbiased_over_seeds():
    f, x, _ = random_game(9, 8)
    bg = np.random.default_rng(2).normal(size=(10, 8))
    exact = shapley_exact(f, x, bg)
    runs = np.array([shapley_permutation(f, x, bg, n_perm=5, seed=s) for s in range(50)])
    se = runs.std(axis=0, ddof=1) / np.sqrt(50)
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 2 * se)


def test_permutation_efficiency_per_ordering():
    f, x, bg = random_game(10, 7)
    est = shapley_permutation(f, x, bg, n_perm=3, seed=1, return_stderr=True)
    assert abs(est.values.sum() - (f(x)[0] - f(bg).mean())) <= 1e-12
    assert est.sum_stderr <= 1e-12


def test_permutation_deterministic_and_seeded():
    f, x, bg = random_game(11, 6)
    a = shapley_permutation(f, x, bg, n_perm=20, seed=[4, 2])
    b = shapley_permutation(f, x, bg, n_perm=20, seed=[4, 2])
    c = shapley_permutation(f, x, bg, n_perm=20, seed=[4, 3])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_permutation_bad_n_perm():
    with pytest.raises(ValueError):
        shapley_permutation(lambda Z: Z.sum(axis=1), np.zeros(2), np.zeros((1, 2)), n_perm=0)


def test_permutation_batching_does_not_matter(monkeypatch):
    import touchnet.attribution as attribution

    f, x, bg = random_game(12, 5)
    want = shapley_permutation(f, x, bg, n_perm=7, seed=3)
    monkeypatch.setattr(attribution, "EVAL_BATCH_ROWS", 13)
    np.testing.assert_array_equal(shapley_permutation(f, x, bg, n_perm=7, seed=3), want)


# ---------------------------------------------------------------- dataset attribution


def test_constant_model():
    zero = init_params(Architecture(), 0).zeros_like()
    ens = model_ensemble([zero])
    X = np.random.default_rng(0).poisson(3.0, size=(4, N_CODES))
    M = attribute_dataset(ens, make_dataset(X, [0, 1, 0, 1]), X[:2].astype(float), AttributionConfig(n_perm=3))
    assert M.base_value == 0.5
    assert np.all(M.values == 0.0)
    assert M.values.shape == (4, N_CODES)


def test_efficiency_residual_within_three_standard_errors():
    ens = random_ensemble(1)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(15, N_CODES))
    bg = rng.normal(size=(40, N_CODES))
    M = attribute_dataset(ens, X, bg, AttributionConfig(n_perm=30, background_per_perm=4, seed=1))
    assert np.all(M.sum_stderr > 0)
    assert np.all(np.abs(M.efficiency_residual()) <= 3 * M.sum_stderr)
    # every ordering sees the whole background: efficiency is exact
    full = attribute_dataset(ens, X, bg, AttributionConfig(n_perm=3, seed=1))
    assert np.max(np.abs(full.efficiency_residual())) <= 1e-12


def test_attribute_deterministic_across_threads():
    ens = random_ensemble(2)
    rng = np.random.default_rng(6)
    X, bg = rng.normal(size=(6, N_CODES)), rng.normal(size=(8, N_CODES))
    cfg = AttributionConfig(n_perm=4, seed=9)
    a = attribute_dataset(ens, X, bg, cfg, threads=1)
    b = attribute_dataset(ens, X, bg, cfg, threads=3)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.stderr, b.stderr)
    assert a.base_value == b.base_value
    np.testing.assert_array_equal(a.predictions, ensemble_predict(ens, X))
    # a row's values do not depend on which other rows are present
    tail = attribute_dataset(ens, X[:3], bg, cfg)
    np.testing.assert_array_equal(tail.values, a.values[:3])


def test_attribute_rejects_empty_background():
    with pytest.raises(ValueError):
        attribute_dataset(random_ensemble(3), np.zeros((1, N_CODES)), np.zeros((0, N_CODES)))


def test_make_background():
    X = np.arange(100 * N_CODES).reshape(100, N_CODES)
    bg = make_background(X, 10, seed=1)
    assert bg.shape == (10, N_CODES)
    assert len({tuple(r) for r in bg}) == 10
    np.testing.assert_array_equal(bg, make_background(X, 10, seed=1))
    assert make_background(X, 500).shape == (100, N_CODES)
    with pytest.raises(ValueError):
        make_background(X[:0], 5)


@pytest.mark.slow
def test_planted_zero_codes_rank_below_planted_effects(desk_run):
    root = desk_run("default")
    ens, payload = load_ensemble(root / "model" / "ensemble.json")
    (train, _, test), _ = _prepare(str(root / "data"), "full", payload["data"]["split_seed"])
    weights = np.array(json.loads((root / "data" / "groundtruth.json").read_text())["effect_weights"])
    bg = make_background(train, 64, seed=0)
    M = attribute_dataset(ens, test, bg, AttributionConfig(n_perm=10, max_users=80), threads=4)
    imp = np.abs(M.values).mean(axis=0)
    assert imp[weights == 0].max() < imp[weights != 0].min()


# ---------------------------------------------------------------- ranking and export


def test_rank_all_zero_is_code_order():
    ranked = rank_features(matrix_of(np.zeros((3, N_CODES))))
    assert [c for c, _, _ in ranked] == list(TOUCHPOINT_CODES)
    assert all(v == 0.0 for _, _, v in ranked)
    assert ranked[0][1] == TOUCHPOINT_NAMES[0]


def test_rank_doubled_feature_first():
    rng = np.random.default_rng(0)
    V = rng.uniform(0.1, 1.0, size=(5, N_CODES))
    V[:, 7] = 2 * np.abs(V).max(axis=1) * np.sign(rng.normal(size=5))
    ranked = rank_features(matrix_of(V))
    assert ranked[0][0] == TOUCHPOINT_CODES[7]
    assert ranked[0][2] == pytest.approx(np.abs(V[:, 7]).mean())


def test_rank_ties_prefer_lower_code():
    V = np.zeros((2, N_CODES))
    V[:, 20] = V[:, 4] = [1.0, -1.0]
    assert [c for c, _, _ in rank_features(matrix_of(V))[:2]] == [5, 21]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_rank_scale_invariant(seed, scale):
    V = np.random.default_rng(seed).normal(size=(4, N_CODES))
    a = [c for c, _, _ in rank_features(matrix_of(V))]
    b = [c for c, _, _ in rank_features(matrix_of(scale * V))]
    assert a == b


def test_rank_empty_rejected():
    with pytest.raises(ValueError):
        rank_features(matrix_of(np.zeros((0, N_CODES))))


def test_beeswarm_export(tmp_path):
    rng = np.random.default_rng(1)
    V = rng.normal(size=(2, N_CODES))
    X = rng.poisson(4.0, size=(2, N_CODES))
    M = matrix_of(V)
    df = pd.read_csv(export_beeswarm(M, make_dataset(X, [0, 1]), tmp_path / "beeswarm.csv"), float_precision="round_trip")
    assert list(df.columns) == ["user_idx", "code", "feature_name", "count", "phi"]
    assert len(df) == 62
    order = [c for c, _, _ in rank_features(M)]
    # grouped: each code occupies one contiguous block, blocks in rank order
    blocks = df["code"].to_numpy().reshape(N_CODES, 2)
    assert np.all(blocks == blocks[:, :1])
    assert list(blocks[:, 0]) == order
    for _, row in df.iterrows():
        j = TOUCHPOINT_CODES.index(row["code"])
        assert row["count"] == X[row["user_idx"], j]
        assert row["phi"] == V[row["user_idx"], j]
        assert row["feature_name"] == TOUCHPOINT_NAMES[j]


def test_beeswarm_needs_enough_rows(tmp_path):
    with pytest.raises(ValueError):
        export_beeswarm(matrix_of(np.zeros((3, N_CODES))), np.zeros((2, N_CODES)), tmp_path / "b.csv")


def test_importance_export(tmp_path):
    V = np.random.default_rng(2).normal(size=(3, N_CODES))
    path = export_importance(matrix_of(V), tmp_path / "importance.csv")
    df = pd.read_csv(path, float_precision="round_trip")
    assert list(df.columns) == ["rank", "code", "feature_name", "mean_abs_phi"]
    assert list(df["rank"]) == list(range(1, N_CODES + 1))
    assert np.all(np.diff(df["mean_abs_phi"]) <= 0)
    want = dict(zip(TOUCHPOINT_CODES, np.abs(V).mean(axis=0)))
    for code, imp in zip(df["code"], df["mean_abs_phi"]):
        assert imp == want[code]


def test_to_frame_columns():
    M = matrix_of(np.zeros((2, N_CODES)))
    assert list(M.to_frame().columns) == [f"phi{c}" for c in TOUCHPOINT_CODES]
