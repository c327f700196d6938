import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdediscovery.dataset import Dataset
from pdediscovery.discover import OperatorFitConfig, fit_linear_pde
from pdediscovery.features import LibrarySpec, build_design_matrix
from pdediscovery.optim import QuasiNewtonConfig
from pdediscovery.select import (
    CostGrid,
    FeatureReport,
    GridSearchConfig,
    StabilityConfig,
    architecture_label,
    parse_architecture,
    feature_report,
    grid_search_architecture,
    grid_search_mk,
    rfe_ranking,
    stability_scores,
)
from pdediscovery.surrogate import SurrogateFitConfig, fit_surrogate


@pytest.fixture(scope="module")
def heat():
    """Surrogate of a two-mode heat solution; ``u_t = u_xx`` holds, ``u_t = c u`` does not."""
    T, X = np.meshgrid(np.linspace(0, 0.1, 21), np.linspace(0, 1, 41), indexing="ij")
    u = np.exp(-np.pi**2 * T) * np.sin(np.pi * X) + 0.5 * np.exp(-4 * np.pi**2 * T) * np.sin(2 * np.pi * X)
    data = Dataset(T.ravel(), X.ravel(), u.ravel())
    cfg = SurrogateFitConfig(hidden=(10, 10), optimizer=QuasiNewtonConfig(max_iter=6000), validation_fraction=0.0)
    net, _ = fit_surrogate(data, cfg)
    return net, data.inputs


@pytest.fixture(scope="module")
def heat_grid(heat):
    net, pts = heat
    return grid_search_mk(net, pts, [0, 1, 2, 3], [1, 2, 3])


# ---------------------------------------------------------------------------
# (m, k) grid


def test_heat_equation_sufficient_at_second_order_linear(heat, heat_grid):
    net, pts = heat
    # one decade drop once u_xx enters the library
    assert heat_grid.cell(2, 1) <= np.min(heat_grid.values[:2]) - 1.0
    model = fit_linear_pde(build_design_matrix(net, pts, LibrarySpec(m=2, k=1)))
    assert model.coefficient("u_xx") == pytest.approx(1.0, abs=0.05)


def test_nested_libraries_never_cost_more(heat_grid):
    cost = 10.0 ** heat_grid.values
    for i in range(cost.shape[0]):
        for j in range(cost.shape[1]):
            for i2 in range(i, cost.shape[0]):
                for j2 in range(j, cost.shape[1]):
                    assert cost[i2, j2] <= cost[i, j] + 1e-10


def test_cells_record_metadata_and_axes(heat_grid):
    assert heat_grid.row_labels == ["0", "1", "2", "3"] and heat_grid.col_labels == ["1", "2", "3"]
    assert heat_grid.meta[(2, 1)]["n_terms"] == 9
    assert not heat_grid.failed()


def test_failed_cells_are_recorded_and_search_continues(heat):
    net, pts = heat
    grid = grid_search_mk(net, pts[:50], [1, 4], [1, 3], GridSearchConfig(max_terms=20))
    assert np.isfinite(grid.cell(1, 1)) and np.isfinite(grid.cell(1, 3))
    failed = {(r, c) for r, c, _ in grid.failed()}
    assert failed == {("4", "3")}
    assert "LibrarySizeError" in grid.reasons[(1, 1)]


def test_threads_give_identical_grid(heat):
    net, pts = heat
    a = grid_search_mk(net, pts[:200], [0, 1, 2], [1, 2])
    b = grid_search_mk(net, pts[:200], [0, 1, 2], [1, 2], GridSearchConfig(threads=4))
    assert a.values.tobytes() == b.values.tobytes()


def test_empty_ranges_rejected(heat):
    net, pts = heat
    with pytest.raises(ValueError):
        grid_search_mk(net, pts, [], [1])
    with pytest.raises(ValueError):
        grid_search_architecture(net, pts, [], [0])


def test_cost_grid_csv_round_trip(tmp_path, heat_grid):
    grid = CostGrid("m", ["0", "1"], "k", ["1", "2"], np.array([[-1.5, np.nan], [-3.0, -4.25]]),
                    {(0, 1): "LinAlgError: singular"})
    grid.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "m\\k,1,2"
    assert lines[1] == "0,-1.5,failed: LinAlgError: singular"
    back = CostGrid.from_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.values, grid.values)
    assert back.reasons == grid.reasons and back.row_labels == grid.row_labels
    heat_grid.to_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(CostGrid.from_csv(tmp_path / "h.csv").values, heat_grid.values)


# ---------------------------------------------------------------------------
# architecture grid


def test_architecture_labels():
    assert architecture_label([]) == "linear"
    assert architecture_label([50, 50]) == "2x50"
    assert architecture_label([20] * 5) == "5x20"
    assert architecture_label([2, 50]) == "2-50"
    assert parse_architecture("2x50") == [50, 50]
    assert parse_architecture("linear") == parse_architecture("0") == []
    for hidden in ([], [3], [4, 4, 4], [10, 2, 7]):
        assert parse_architecture(architecture_label(hidden)) == hidden
    for bad in ("2x", "x5", "0x3", "3-0", "two"):
        with pytest.raises(ValueError):
            parse_architecture(bad)


def test_no_hidden_layer_net_equals_linear_model_with_bias(heat):
    net, pts = heat
    cfg = GridSearchConfig(operator=OperatorFitConfig(optimizer=QuasiNewtonConfig(memory=10, max_iter=2000,
                                                                                  grad_tol=1e-12)))
    grid = grid_search_architecture(net, pts, [[]], [1, 2], cfg)
    for m in (1, 2):
        design = build_design_matrix(net, pts, LibrarySpec(m=m, k=1, include_bias=True))
        linear = fit_linear_pde(design)
        assert 10.0 ** grid.cell("linear", m) == pytest.approx(linear.residual, rel=1e-6)


def test_larger_architecture_not_worse(heat):
    net, pts = heat
    cfg = GridSearchConfig(operator=OperatorFitConfig(optimizer=QuasiNewtonConfig(memory=10, max_iter=500)))
    grid = grid_search_architecture(net, pts, [[2, 2], [8, 8]], [1, 2], cfg)
    for m in (1, 2):
        assert grid.cell(architecture_label([8, 8]), m) <= grid.cell(architecture_label([2, 2]), m) + np.log10(2.0)


# ---------------------------------------------------------------------------
# feature diagnostics


def orthogonal(n=400, p=8, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    return Q * np.sqrt(n)  # orthogonal columns with unit mean square


def planted(n=400, p=8, seed=0):
    X = orthogonal(n, p, seed)
    return X, 2.0 * X[:, 1] - 1.5 * X[:, 4]


def test_planted_terms_are_stable():
    X, y = planted()
    scores = stability_scores(X, y)
    assert scores[1] >= 0.9 and scores[4] >= 0.9
    assert np.all(np.delete(scores, [1, 4]) <= 0.1)


def test_stability_reproducible_and_bounded():
    X, y = planted(seed=3)
    y = y + np.random.default_rng(3).normal(size=y.size)
    cfg = StabilityConfig(n_subsamples=20, seed=7)
    a = stability_scores(X, y, cfg)
    b = stability_scores(X, y, cfg)
    assert a.tobytes() == b.tobytes()
    assert np.all((a >= 0) & (a <= 1))


def test_stability_config_validation():
    with pytest.raises(ValueError):
        StabilityConfig(jitter=(0.0, 1.0))
    with pytest.raises(ValueError):
        StabilityConfig(fraction=1.5)


def test_rfe_drops_weakest_first():
    X = orthogonal(p=4)
    y = 4 * X[:, 0] + 3 * X[:, 1] + 2 * X[:, 2] + 1 * X[:, 3]
    np.testing.assert_array_equal(rfe_ranking(X, y), [1, 2, 3, 4])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), col=st.integers(0, 5), factor=st.sampled_from([1e-3, 7.0, 1e3]))
def test_rfe_is_a_permutation_and_scale_invariant(seed, col, factor):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 6)) * rng.uniform(0.1, 10, 6)
    y = X @ rng.normal(size=6) + rng.normal(size=60)
    r = rfe_ranking(X, y)
    assert sorted(r) == list(range(1, 7))
    Xs = X.copy()
    Xs[:, col] *= factor
    np.testing.assert_array_equal(rfe_ranking(Xs, y), r)


def test_rfe_scale_invariant_on_burgers_design(burgers_run):
    design = burgers_run.design()
    ref = rfe_ranking(design.values, design.target)
    for c in range(design.values.shape[1]):
        scaled = design.values.copy()
        scaled[:, c] *= 1e3
        np.testing.assert_array_equal(rfe_ranking(scaled, design.target), ref)


def test_feature_report_csv_and_top(tmp_path):
    rep = FeatureReport(["a", "b", "c"], np.array([1.0, 2.0, 3.0]), np.array([0.1, 1.0, 0.5]), np.array([3, 1, 2]))
    assert rep.top(2) == ["b", "c"]
    rep.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "term,variance,stability,rfe_rank" and lines[2] == "b,2.0,1.0,1"


def test_feature_report_variance_is_population_variance(heat):
    net, pts = heat
    design = build_design_matrix(net, pts, LibrarySpec(m=2, k=1))
    rep = feature_report(design, StabilityConfig(n_subsamples=5))
    np.testing.assert_allclose(rep.variance, design.values.var(axis=0, ddof=0))
    with pytest.raises(ValueError):
        feature_report(design.select(["u"]))
