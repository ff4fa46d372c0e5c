"""Polynomial bases, OLS fitting (including rank-deficient min-norm) and the
truncation operator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_pc import (
    BasisTooLarge,
    DimensionMismatch,
    EmptySample,
    build_basis,
    fit_basis_model,
    ols_fit,
    truncate,
)
from fbsde_pc.regression import DesignSolver, RegressionModel, constant_model


class TestBuildBasis:
    def test_bivariate_quadratic(self):
        basis = build_basis(2, 2)
        assert basis.size == 6
        assert basis.exponents == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

    def test_constant_only(self):
        basis = build_basis(1, 0)
        assert basis.exponents == ((0,),)

    def test_trivariate_quadratic_size(self):
        assert build_basis(3, 2).size == 10

    def test_cap(self):
        with pytest.raises(BasisTooLarge):
            build_basis(10, 5, max_size=100)

    def test_design_matrix_values(self):
        basis = build_basis(2, 2)
        x = np.array([[2.0, 3.0]])
        row = basis.design_matrix(x)[0]
        assert row.tolist() == [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]

    def test_design_matrix_dimension_check(self):
        basis = build_basis(2, 2)
        with pytest.raises(DimensionMismatch):
            basis.design_matrix(np.zeros((4, 3)))


class TestOlsFit:
    def test_exact_quadratic_zero_residual(self):
        rng = np.random.default_rng(0)
        basis = build_basis(2, 2)
        x = rng.standard_normal((400, 2))
        design = basis.design_matrix(x)
        coef_true = np.array([0.5, -1.0, 2.0, 0.25, 1.5, -0.75])
        y = design @ coef_true
        model = ols_fit(design, y, basis=basis)
        rss = float(np.sum((design @ model.coefficients - y) ** 2))
        assert rss <= 1e-10 * float(np.sum(y**2))

    def test_constant_responses(self):
        basis = build_basis(2, 2)
        x = np.random.default_rng(1).standard_normal((100, 2))
        model = fit_basis_model(basis, x, np.full(100, 3.25))
        assert model.coefficients[0] == pytest.approx(3.25, abs=1e-12)
        assert np.all(np.abs(model.coefficients[1:]) < 1e-12)

    def test_duplicated_column_gets_pseudoinverse_solution(self):
        # A has identical columns; the minimum-norm solution splits the
        # pinv weight evenly: A+ y = (1/2, 1/2) for y = first column
        col = np.array([1.0, 2.0, 3.0])
        design = np.column_stack([col, col])
        expected = np.linalg.pinv(design) @ col
        for standardize in (False, True):
            model = ols_fit(design, col, standardize=standardize)
            assert model.coefficients == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx([0.5, 0.5])

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            ols_fit(np.zeros((0, 2)), np.zeros(0))

    def test_vector_target_matches_columnwise_fits(self):
        rng = np.random.default_rng(5)
        basis = build_basis(2, 2)
        x = rng.standard_normal((200, 2))
        design = basis.design_matrix(x)
        y = rng.standard_normal((200, 3))
        joint = ols_fit(design, y)
        for k in range(3):
            single = ols_fit(design, y[:, k])
            assert joint.coefficients[:, k] == pytest.approx(single.coefficients)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(9)
        basis = build_basis(3, 2)
        x = rng.standard_normal((500, 3))
        design = basis.design_matrix(x)
        y = rng.standard_normal(500)
        model = ols_fit(design, y)
        residual = y - design @ model.coefficients
        for k in range(design.shape[1]):
            dot = abs(float(residual @ design[:, k]))
            assert dot <= 1e-8 * np.linalg.norm(residual) * np.linalg.norm(design[:, k]) + 1e-12

    def test_scaling_equivariance(self):
        rng = np.random.default_rng(13)
        basis = build_basis(2, 2)
        x = rng.standard_normal((150, 2))
        design = basis.design_matrix(x)
        y = rng.standard_normal(150)
        base = ols_fit(design, y).coefficients
        scaled = ols_fit(design, 7.5 * y).coefficients
        assert scaled == pytest.approx(7.5 * base, rel=1e-10)

    def test_consistency_as_samples_grow(self):
        basis = build_basis(1, 2)
        coef_true = np.array([1.0, -2.0, 0.5])
        medians = []
        for M in (100, 1000, 10000):
            errs = []
            for seed in range(20):
                rng = np.random.default_rng(seed)
                x = rng.standard_normal((M, 1))
                design = basis.design_matrix(x)
                y = design @ coef_true + 0.5 * rng.standard_normal(M)
                fit = ols_fit(design, y).coefficients
                errs.append(np.linalg.norm(fit - coef_true))
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]


class TestTruncate:
    def test_clamp(self):
        assert truncate(np.array([3.0, -5.0]), 2.0).tolist() == [2.0, -2.0]

    def test_identity_below_bound(self):
        x = np.array([0.5, -1.25])
        assert truncate(x, 2.0).tolist() == x.tolist()

    def test_infinite_bound_is_identity(self):
        x = np.array([1e12, -1e12])
        assert truncate(x, math.inf).tolist() == x.tolist()

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8),
           st.floats(0.1, 1e5))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, values, bound):
        x = np.array(values)
        once = truncate(x, bound)
        assert truncate(once, bound).tolist() == once.tolist()

    def test_rejects_bad_bound(self):
        with pytest.raises(ValueError):
            truncate(np.array([1.0]), 0.0)


class TestPredict:
    def test_constant_coefficients(self):
        basis = build_basis(2, 2)
        model = RegressionModel(np.array([4.0, 0, 0, 0, 0, 0]), basis, 10.0)
        out = model.predict(np.random.default_rng(2).standard_normal((5, 2)))
        assert out == pytest.approx(np.full(5, 4.0))

    def test_linear_fit_recovers_values(self):
        rng = np.random.default_rng(3)
        basis = build_basis(2, 1)
        x = rng.standard_normal((100, 2))
        y = 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]
        model = fit_basis_model(basis, x, y)
        probe = rng.standard_normal((10, 2))
        want = 1.0 + 2.0 * probe[:, 0] - 3.0 * probe[:, 1]
        assert model.predict(probe) == pytest.approx(want, abs=1e-10)

    def test_truncation_applies(self):
        basis = build_basis(1, 0)
        model = RegressionModel(np.array([10.0]), basis, 1.0)
        assert model.predict(np.zeros((3, 1))).tolist() == [1.0, 1.0, 1.0]

    def test_dimension_mismatch(self):
        basis = build_basis(2, 1)
        model = RegressionModel(np.zeros(3), basis, math.inf)
        with pytest.raises(DimensionMismatch):
            model.predict(np.zeros((4, 3)))

    def test_roundtrip_dict(self):
        basis = build_basis(2, 2)
        model = RegressionModel(np.arange(6.0), basis, 5.0)
        again = RegressionModel.from_dict(model.to_dict())
        x = np.random.default_rng(0).standard_normal((4, 2))
        assert again.predict(x) == pytest.approx(model.predict(x))


class TestDesignSolver:
    def test_factorization_reused_across_responses(self):
        rng = np.random.default_rng(21)
        design = rng.standard_normal((60, 4))
        solver = DesignSolver(design)
        y1 = rng.standard_normal(60)
        y2 = rng.standard_normal(60)
        stacked = solver.solve(np.column_stack([y1, y2]))
        assert stacked[:, 0] == pytest.approx(solver.solve(y1))
        assert stacked[:, 1] == pytest.approx(solver.solve(y2))

    def test_point_mass_design_degrades_gracefully(self):
        basis = build_basis(2, 2)
        x = np.zeros((50, 2))
        design = basis.design_matrix(x)
        model = ols_fit(design, np.full(50, 2.5), basis=basis)
        assert (design @ model.coefficients)[0] == pytest.approx(2.5)

    def test_constant_model(self):
        basis = build_basis(2, 2)
        model = constant_model(np.array([3.0, -9.0]), basis, bound=5.0)
        out = model.predict(np.ones((4, 2)))
        assert out[0].tolist() == [3.0, -5.0]
