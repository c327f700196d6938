import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdediscovery.derivnet import Mlp, forward, input_jets
from pdediscovery.features import (
    CoordinateFeature,
    DerivativeTerm,
    LibrarySizeError,
    LibrarySpec,
    build_design_matrix,
    count_derivative_terms,
    count_monomials,
    design_from_jets,
    enumerate_derivative_terms,
    enumerate_monomials,
    evaluate_columns,
    parse_column,
    parse_term,
)


def brute_derivatives(N, M, m):
    return {(j, a) for j in range(M) for a in product(range(m + 1), repeat=N) if sum(a) <= m}


def brute_monomials(n, k):
    # multisets of size 1..k drawn from n items, as sorted tuples
    out = set()
    for deg in range(1, k + 1):
        for combo in product(range(n), repeat=deg):
            out.add(tuple(sorted(combo)))
    return out


def test_navier_stokes_example_counts():
    assert count_derivative_terms(3, 5, 2) == 50
    assert len(enumerate_derivative_terms(3, 5, 2)) == 50
    assert count_monomials(50, 2) == 1325
    assert len(enumerate_monomials(enumerate_derivative_terms(3, 5, 2), 2)) == 1325


def test_counts_match_brute_force():
    for N, M, m, k in product(range(1, 4), range(1, 4), range(0, 4), range(1, 4)):
        derivs = enumerate_derivative_terms(N, M, m)
        assert {(d.output, d.alpha) for d in derivs} == brute_derivatives(N, M, m)
        assert len(derivs) == count_derivative_terms(N, M, m)
        if count_monomials(len(derivs), k) > 5000:
            continue
        monos = enumerate_monomials(derivs, k)
        assert len(monos) == count_monomials(len(derivs), k)
        assert len(monos) == len(brute_monomials(len(derivs), k))
        assert len({t.name for t in monos}) == len(monos)


def test_small_enumerations():
    assert [str(LibrarySpec(0, 1).derivative_name(d)) for d in enumerate_derivative_terms(1, 1, 0)] == ["u"]
    spec = LibrarySpec(2, 1, n_space=2)
    names = [spec.derivative_name(d) for d in enumerate_derivative_terms(2, 1, 2)]
    assert names == ["u", "u_x", "u_y", "u_xx", "u_xy", "u_yy"]
    derivs = enumerate_derivative_terms(1, 1, 2)
    assert len(enumerate_monomials(derivs, 1)) == 3


def test_burgers_library_names():
    spec = LibrarySpec(m=2, k=2)
    assert [str(c) for c in spec.columns()] == [
        "u", "u_x", "u_xx", "u^2", "u*u_x", "u*u_xx", "u_x^2", "u_x*u_xx", "u_xx^2"]


def test_degree_and_order_invariants():
    spec = LibrarySpec(m=3, k=3, n_space=2, n_out=2)
    for t in spec.columns():
        assert 1 <= t.degree <= 3
        assert t.max_order <= 3
    degrees = [t.degree for t in spec.columns()]
    assert degrees == sorted(degrees)


def test_size_guard():
    derivs = enumerate_derivative_terms(3, 5, 2)
    with pytest.raises(LibrarySizeError):
        enumerate_monomials(derivs, 4, max_terms=10**5)
    with pytest.raises(LibrarySizeError):
        LibrarySpec(m=2, k=3, n_space=3, n_out=5, max_terms=1000).columns()


def test_invalid_spec():
    with pytest.raises(ValueError):
        LibrarySpec(m=-1, k=1)
    with pytest.raises(ValueError):
        LibrarySpec(m=1, k=0)


@pytest.mark.parametrize("N,M,m,k", [(1, 1, 2, 3), (2, 2, 2, 2), (3, 1, 2, 2)])
def test_names_round_trip(N, M, m, k):
    spec = LibrarySpec(m=m, k=k, n_space=N, n_out=M)
    for t in spec.columns():
        assert parse_term(t.name, spec) == t


def test_parse_reorders_factors_canonically():
    spec = LibrarySpec(m=2, k=2)
    assert parse_term("u_x*u", spec).name == "u*u_x"
    assert parse_term("u*u", spec).name == "u^2"
    with pytest.raises(ValueError):
        parse_term("u_xxx", spec)


def test_parse_coordinates():
    spec = LibrarySpec(m=0, k=1, include_coords=True)
    assert parse_column("t", spec) == CoordinateFeature(0, "t")
    assert parse_column("x", spec) == CoordinateFeature(1, "x")
    assert [str(c) for c in spec.columns()] == ["u", "t", "x"]


# ---------------------------------------------------------------------------
# design matrix


def small_net(seed=0):
    net = Mlp.initialize((2, 6, 6, 1), seed)
    return net.with_params(np.random.default_rng(seed).normal(size=net.n_params) * 0.7)


def test_product_definition():
    # u = 2, u_x = 3 at the point: u(t, x) = 2 + 3x through a linear net evaluated at x = 0
    net = Mlp((2, 1), (np.array([[0.0, 3.0]]),), (np.array([2.0]),))
    spec = LibrarySpec(m=1, k=2)
    d = build_design_matrix(net, [[0.0, 0.0]], spec)
    assert d.select(["u*u_x"]).values[0, 0] == 6.0
    assert d.target[0] == 0.0


def test_degree_one_columns_equal_jets_bitwise():
    net = small_net(1)
    pts = np.random.default_rng(1).uniform(size=(50, 2))
    spec = LibrarySpec(m=2, k=2)
    d = build_design_matrix(net, pts, spec)
    jets = input_jets(net, pts, 2)
    assert d.select(["u"]).values[:, 0].tobytes() == jets.get(0, (0, 0)).tobytes()
    assert d.select(["u_x"]).values[:, 0].tobytes() == jets.get(0, (0, 1)).tobytes()
    assert d.select(["u_xx"]).values[:, 0].tobytes() == jets.get(0, (0, 2)).tobytes()
    assert d.target.tobytes() == jets.get(0, (1, 0)).tobytes()
    assert d.values[:, 0].tobytes() == forward(net, pts)[:, 0].tobytes()


def test_shape_and_statistics():
    net = small_net(2)
    pts = np.random.default_rng(2).uniform(size=(300, 2))
    d = build_design_matrix(net, pts, LibrarySpec(m=2, k=2))
    assert d.values.shape == (300, 9) and d.target.shape == (300,)
    np.testing.assert_allclose(d.means, d.values.mean(axis=0))
    np.testing.assert_allclose(d.stds, d.values.std(axis=0))


def test_input_width_checked():
    with pytest.raises(ValueError):
        build_design_matrix(small_net(), np.zeros((2, 2)), LibrarySpec(m=1, k=1, n_space=2))


def test_non_finite_rows_excluded():
    net = small_net(3)
    pts = np.random.default_rng(3).uniform(size=(10, 2))
    jets = input_jets(net, pts, 2)
    jets.values[4, 0, 5] = np.inf  # u_xx
    d = design_from_jets(jets, LibrarySpec(m=2, k=2))
    assert d.n_rows == 9 and d.n_excluded == 1


def test_row_permutation_equivariance():
    net = small_net(4)
    pts = np.random.default_rng(4).uniform(size=(40, 2))
    perm = np.random.default_rng(5).permutation(40)
    spec = LibrarySpec(m=2, k=3)
    a = build_design_matrix(net, pts, spec)
    b = build_design_matrix(net, pts[perm], spec)
    np.testing.assert_array_equal(a.values[perm], b.values)
    np.testing.assert_array_equal(a.target[perm], b.target)


def test_coordinate_columns_use_points():
    net = small_net(5)
    pts = np.random.default_rng(6).uniform(size=(8, 2))
    d = build_design_matrix(net, pts, LibrarySpec(m=0, k=1, include_coords=True, include_bias=True))
    assert d.names == ["1", "u", "t", "x"]
    np.testing.assert_array_equal(d.values[:, 0], 1.0)
    np.testing.assert_array_equal(d.values[:, 2:], pts)


def test_csv_header(tmp_path):
    net = small_net(7)
    d = build_design_matrix(net, np.random.default_rng(7).uniform(size=(5, 2)), LibrarySpec(m=2, k=2))
    d.to_csv(tmp_path / "design.csv")
    lines = (tmp_path / "design.csv").read_text().splitlines()
    assert lines[0] == "u,u_x,u_xx,u^2,u*u_x,u*u_xx,u_x^2,u_x*u_xx,u_xx^2,u_t"
    assert len(lines) == 6
    row = np.array(lines[1].split(","), dtype=float)
    np.testing.assert_array_equal(row, np.append(d.values[0], d.target[0]))


@settings(max_examples=20, deadline=None)
@given(N=st.integers(1, 3), M=st.integers(1, 2), m=st.integers(0, 2), k=st.integers(1, 2))
def test_multivariate_columns_are_products_of_jets(N, M, m, k):
    net = Mlp.initialize((N + 1, 4, M), seed=N * 10 + M)
    pts = np.random.default_rng(m).uniform(size=(5, N + 1))
    spec = LibrarySpec(m=m, k=k, n_space=N, n_out=M)
    jets = input_jets(net, pts, max(m, 1))
    cols = spec.columns()
    vals = evaluate_columns(cols, jets)
    for c, term in enumerate(cols):
        ref = np.ones(5)
        for d, p in term.factors:
            ref = ref * jets.get(d.output, (0,) + d.alpha) ** p
        np.testing.assert_allclose(vals[:, c], ref, rtol=1e-14)


def test_derivative_term_order():
    assert DerivativeTerm(0, (2, 1)).order == 3
    assert math.comb(2 + 3 - 1, 3 - 1) == 6
