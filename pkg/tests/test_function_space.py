import numpy as np
import pytest

from sabon.dynamics import TWO_PI, CircleRotation, PerturbedCat, forward_map
from sabon.function_space import (
    FieldSample,
    GridMismatch,
    build_grid,
    discrete_norms,
    eval_trig_poly,
    inner_product,
    koopman_apply,
    sample_trig_poly,
    sample_poly_on_grid,
    transfer_apply,
    trig_dictionary,
    TrigPoly,
)


def brute_force_eval(poly, x):
    """Oracle: naive double-loop summation over the dictionary."""
    order = poly.order
    terms = [lambda u, k=k: np.cos(k * u) for k in range(order + 1)]
    terms += [lambda u, k=k: np.sin(k * u) for k in range(1, order + 1)]
    scale = 1.0 if poly.dim == 1 else TWO_PI
    total = 0.0
    if poly.dim == 1:
        for p, fp in enumerate(terms):
            total += poly.coeffs[p] * fp(scale * x[0])
        return total
    for p, fp in enumerate(terms):
        for q, fq in enumerate(terms):
            total += poly.coeffs[p, q] * fp(scale * x[0]) * fq(scale * x[1])
    return total


class TestGrid:
    def test_circle_grid_of_four(self):
        grid = build_grid(1, 4)
        assert np.allclose(grid.points[:, 0], [0.0, np.pi / 2, np.pi, 3 * np.pi / 2])

    def test_tiny_torus_grid(self):
        grid = build_grid(2, 2)
        expected = {(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)}
        assert {tuple(p) for p in grid.points} == expected

    def test_paper_scale_torus_grid(self):
        assert build_grid(2, 100).n == 10_000

    def test_embedded_shape(self):
        assert build_grid(1, 8).embedded.shape == (8, 2)
        assert build_grid(2, 8).embedded.shape == (64, 4)

    def test_rejects_tiny_sides(self):
        with pytest.raises(ValueError):
            build_grid(2, 1)


class TestTrigPoly:
    def test_circle_dictionary_cardinality(self):
        poly = sample_trig_poly(np.random.default_rng(0), 1, 9)
        assert poly.coeffs.shape == (19,)

    def test_torus_dictionary_cardinality(self):
        poly = sample_trig_poly(np.random.default_rng(0), 2, 5)
        assert poly.coeffs.size == 121

    def test_seeded_determinism(self):
        a = sample_trig_poly(np.random.default_rng(42), 2, 5)
        b = sample_trig_poly(np.random.default_rng(42), 2, 5)
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_coefficients_in_range(self):
        poly = sample_trig_poly(np.random.default_rng(3), 2, 5)
        assert poly.coeffs.min() >= -1.0 and poly.coeffs.max() <= 1.0


class TestEvalTrigPoly:
    def test_constant_term(self):
        coeffs = np.zeros(7)
        coeffs[0] = 1.0
        poly = TrigPoly(dim=1, order=3, coeffs=coeffs)
        pts = np.linspace(0, TWO_PI, 11)[:, None]
        assert np.allclose(eval_trig_poly(poly, pts), 1.0)

    def test_pure_sine(self):
        coeffs = np.zeros(7)
        coeffs[4] = 1.0  # sin(1 * theta) sits right after cos(0..3)
        poly = TrigPoly(dim=1, order=3, coeffs=coeffs)
        assert eval_trig_poly(poly, np.array([[np.pi / 2]]))[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_brute_force(self, dim):
        rng = np.random.default_rng(7)
        poly = sample_trig_poly(rng, dim, 4)
        pts = rng.uniform(0, TWO_PI if dim == 1 else 1.0, size=(20, dim))
        fast = eval_trig_poly(poly, pts)
        slow = [brute_force_eval(poly, p) for p in pts]
        assert np.allclose(fast, slow, atol=1e-12)


class TestTransferApply:
    def test_circle_rotation_shifts_sine(self):
        grid = build_grid(1, 100)
        coeffs = np.zeros(19)
        coeffs[10] = 1.0  # sin(theta)
        poly = TrigPoly(dim=1, order=9, coeffs=coeffs)
        out = transfer_apply(CircleRotation(-1.0), poly, grid)
        theta = grid.points[:, 0]
        expected = np.cos(1.0) * np.sin(theta) + np.sin(1.0) * np.cos(theta)
        assert np.allclose(out.values, expected, atol=1e-13)

    def test_volume_preserving_map_fixes_constant(self):
        grid = build_grid(2, 16)
        coeffs = np.zeros((11, 11))
        coeffs[0, 0] = 1.0
        poly = TrigPoly(dim=2, order=5, coeffs=coeffs)
        out = transfer_apply(PerturbedCat(0.0), poly, grid)
        assert np.allclose(out.values, 1.0, atol=1e-12)

    def test_two_steps_match_nested_single_steps(self):
        # semigroup oracle: L^2 p computed by two nested exact applications
        from sabon.dynamics import inverse_map, jacobian_det

        desc = PerturbedCat(0.01)
        grid = build_grid(2, 10)
        rng = np.random.default_rng(11)
        poly = sample_trig_poly(rng, 2, 3)
        probes = rng.uniform(0, 1, size=(100, 2))

        def transfer_at(points, func):
            inv = inverse_map(desc, points)
            return func(inv) / jacobian_det(desc, inv)

        single = lambda pts: transfer_at(pts, lambda q: eval_trig_poly(poly, q))  # noqa: E731
        oracle = transfer_at(probes, single)

        pt2 = transfer_apply(desc, poly, grid, k=2)
        # evaluate our k=2 action at the probe points through the orbit API
        from sabon.dynamics import inverse_orbit_weight

        pts, w = inverse_orbit_weight(desc, probes, 2)
        ours = eval_trig_poly(poly, pts) / w
        assert np.max(np.abs(ours - oracle) / np.abs(oracle)) <= 1e-8
        assert pt2.values.shape == (grid.n,)

    def test_mass_conservation_on_torus(self):
        grid = build_grid(2, 100)
        ones = FieldSample(grid, np.ones(grid.n))
        rng = np.random.default_rng(13)
        for _ in range(3):
            poly = sample_trig_poly(rng, 2, 5)
            before = inner_product(sample_poly_on_grid(poly, grid), ones)
            after = inner_product(transfer_apply(PerturbedCat(0.01), poly, grid), ones)
            assert abs(after - before) <= 1e-3

    def test_circle_transfer_stays_in_dictionary_span(self):
        grid = build_grid(1, 100)
        rng = np.random.default_rng(17)
        poly = sample_trig_poly(rng, 1, 9)
        out = transfer_apply(CircleRotation(-1.0), poly, grid)
        dictionary = trig_dictionary(grid.points[:, 0], 9)
        _, residual, *_ = np.linalg.lstsq(dictionary, out.values, rcond=None)
        assert float(residual[0]) if residual.size else 0.0 <= 1e-10


class TestKoopmanApply:
    def test_constant_total(self):
        grid = build_grid(2, 8)
        coeffs = np.zeros((11, 11))
        coeffs[0, 0] = 2.5
        poly = TrigPoly(dim=2, order=5, coeffs=coeffs)
        out = koopman_apply(PerturbedCat(0.01), poly, grid)
        assert np.allclose(out.values, 2.5)

    def test_circle_composition(self):
        grid = build_grid(1, 64)
        coeffs = np.zeros(19)
        coeffs[10] = 1.0
        poly = TrigPoly(dim=1, order=9, coeffs=coeffs)
        out = koopman_apply(CircleRotation(-1.0), poly, grid)
        assert np.allclose(out.values, np.sin(grid.points[:, 0] - 1.0), atol=1e-13)

    def test_matches_pointwise_definition(self):
        desc = PerturbedCat(0.01)
        grid = build_grid(2, 12)
        poly = sample_trig_poly(np.random.default_rng(19), 2, 4)
        out = koopman_apply(desc, poly, grid)
        expected = eval_trig_poly(poly, forward_map(desc, grid.points))
        assert np.array_equal(out.values, expected)


class TestInnerProductAndNorms:
    def test_constant_pairing(self):
        grid = build_grid(1, 10)
        u = FieldSample(grid, np.ones(10))
        assert inner_product(u, u) == pytest.approx(1.0)

    def test_fourier_orthogonality_on_uniform_grid(self):
        grid = build_grid(1, 100)
        s = FieldSample(grid, np.sin(grid.points[:, 0]))
        c = FieldSample(grid, np.cos(grid.points[:, 0]))
        assert abs(inner_product(s, c)) <= 1e-14

    def test_matches_naive_sum(self):
        grid = build_grid(2, 7)
        rng = np.random.default_rng(23)
        u = FieldSample(grid, rng.normal(size=grid.n))
        v = FieldSample(grid, rng.normal(size=grid.n))
        naive = sum(a * b for a, b in zip(u.values, v.values)) / grid.n
        assert inner_product(u, v) == pytest.approx(naive, abs=1e-13)

    def test_grid_mismatch_rejected(self):
        u = FieldSample(build_grid(1, 8), np.ones(8))
        v = FieldSample(build_grid(1, 16), np.ones(16))
        with pytest.raises(GridMismatch):
            inner_product(u, v)

    def test_bilinear_symmetric_positive(self):
        grid = build_grid(1, 32)
        rng = np.random.default_rng(29)
        u = FieldSample(grid, rng.normal(size=32))
        v = FieldSample(grid, rng.normal(size=32))
        w = FieldSample(grid, rng.normal(size=32))
        alpha = 1.7
        lhs = inner_product(FieldSample(grid, alpha * u.values + v.values), w)
        assert lhs == pytest.approx(alpha * inner_product(u, w) + inner_product(v, w))
        assert inner_product(u, v) == pytest.approx(inner_product(v, u))
        assert inner_product(u, u) > 0.0

    def test_norms_of_constant(self):
        grid = build_grid(1, 12)
        norms = discrete_norms(FieldSample(grid, np.ones(12)))
        assert norms["l2"] == pytest.approx(1.0)
        assert norms["l1"] == pytest.approx(1.0)

    def test_norms_of_grid_indicator(self):
        grid = build_grid(1, 16)
        values = np.zeros(16)
        values[3] = 16.0
        norms = discrete_norms(FieldSample(grid, values))
        assert norms["l2"] == pytest.approx(4.0)  # sqrt(n)
        assert norms["l1"] == pytest.approx(1.0)

    def test_sine_l2_norm(self):
        grid = build_grid(1, 100)
        norms = discrete_norms(FieldSample(grid, np.sin(grid.points[:, 0])))
        assert norms["l2"] == pytest.approx(np.sqrt(0.5), abs=1e-12)


class TestFieldSampleInvariants:
    def test_length_checked(self):
        with pytest.raises(GridMismatch):
            FieldSample(build_grid(1, 8), np.ones(9))

    def test_finite_checked(self):
        values = np.ones(8)
        values[0] = np.nan
        with pytest.raises(ValueError):
            FieldSample(build_grid(1, 8), values)
