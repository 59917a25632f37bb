import math

import numpy as np
import pytest

from nonlocal_ramsey.calculus import (
    Field,
    PairSet,
    TwoPointField,
    assemble_operator,
    bilinear_a,
    dual_norm_upper_bound,
    energy_norm,
    estimate_equivalence_constants,
    l2_norm,
    nl_adjoint_gradient,
    nl_diffusion,
    nl_divergence,
    nl_interaction,
)
from nonlocal_ramsey.errors import StructuralError
from nonlocal_ramsey.geometry import Domain, build_grid
from nonlocal_ramsey.kernel import KernelParams, alpha


@pytest.fixture
def tiny_pairs():
    """Three grid points: one interior point and one interaction point on each side."""
    domain = Domain(dim=1, lower=(0.0,), upper=(0.1,), epsilon=0.1)
    grid = build_grid(domain, 0.1)
    return PairSet.build(grid, KernelParams(sigma=0.1, epsilon=0.1, mu=0.05))


def random_two_point(pairs, rng):
    return TwoPointField(rng.standard_normal(pairs.n_pairs), pairs)


def test_pair_set_is_symmetric(pairs_1d):
    t = pairs_1d.transpose
    assert np.array_equal(pairs_1d.rows[t], pairs_1d.cols)
    assert np.array_equal(pairs_1d.cols[t], pairs_1d.rows)
    assert np.all(pairs_1d.distance <= 0.2)
    assert np.array_equal(pairs_1d.alpha[t], -pairs_1d.alpha)


def test_pair_set_rejects_foreign_kernel(grid_1d):
    with pytest.raises(StructuralError):
        PairSet.build(grid_1d, KernelParams(sigma=0.1, epsilon=0.3, mu=0.1))


def test_divergence_hand_sum(tiny_pairs):
    grid = tiny_pairs.grid
    assert grid.n_points == 3
    params = tiny_pairs.params
    values = {(int(i), int(j)): 0.5 + i - 2.0 * j for i, j in zip(tiny_pairs.rows, tiny_pairs.cols)}
    nu = TwoPointField(np.array([values[(int(i), int(j))] for i, j in zip(tiny_pairs.rows, tiny_pairs.cols)]),
                       tiny_pairs)
    result = nl_divergence(nu, grid).values

    x = grid.points[:, 0]
    for i in range(3):
        expected = sum(
            0.1 * (values[(i, j)] + values[(j, i)]) * alpha(params, x[i], x[j])
            for j in range(3) if (i, j) in values
        )
        assert result[i] == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_divergence_kills_antisymmetric_fields(pairs_1d, rng):
    grid = pairs_1d.grid
    assert np.all(nl_divergence(TwoPointField(np.zeros(pairs_1d.n_pairs), pairs_1d), grid).values == 0.0)
    r = rng.standard_normal(pairs_1d.n_pairs)
    antisymmetric = TwoPointField(r - r[pairs_1d.transpose], pairs_1d)
    assert np.max(np.abs(nl_divergence(antisymmetric, grid).values)) < 1e-12
    assert np.max(np.abs(nl_interaction(antisymmetric, grid))) < 1e-12


def test_adjoint_gradient_of_constant_vanishes(pairs_1d):
    u = Field(np.full(pairs_1d.grid.n_points, 3.0), pairs_1d.grid)
    assert np.all(nl_adjoint_gradient(u, pairs_1d).values == 0.0)


def test_adjoint_gradient_is_symmetric(pairs_1d, rng):
    u = Field(rng.standard_normal(pairs_1d.grid.n_points), pairs_1d.grid)
    grad = nl_adjoint_gradient(u, pairs_1d).values
    assert np.allclose(grad, grad[pairs_1d.transpose], rtol=0.0, atol=1e-15)


@pytest.mark.parametrize("pairs_name", ["pairs_1d", "pairs_2d"])
def test_adjointness(pairs_name, request, rng):
    pairs = request.getfixturevalue(pairs_name)
    grid = pairs.grid
    w = grid.weights
    for _ in range(100):
        u = Field(rng.standard_normal(grid.n_points), grid)
        nu = random_two_point(pairs, rng)
        left = w * u.values * nl_divergence(nu, grid).values
        right = w[pairs.rows] * pairs.col_weights * nu.values * nl_adjoint_gradient(u, pairs).values
        scale = np.abs(left).sum() + np.abs(right).sum()
        assert abs(left.sum() - right.sum()) / scale < 1e-12


@pytest.mark.parametrize("pairs_name", ["pairs_1d", "pairs_2d"])
def test_diffusion_matches_composition(pairs_name, request, rng):
    pairs = request.getfixturevalue(pairs_name)
    grid = pairs.grid
    for _ in range(100):
        u = Field(rng.standard_normal(grid.n_points), grid)
        direct = nl_diffusion(u, pairs).values[grid.interior]
        composed = -0.5 * nl_divergence(nl_adjoint_gradient(u, pairs), grid).values[grid.interior]
        assert np.max(np.abs(direct - composed)) < 1e-12 * max(1.0, np.max(np.abs(direct)))


def test_diffusion_of_constant_and_linear_fields():
    domain = Domain(dim=1, lower=(0.0,), upper=(1.0,), epsilon=0.2)
    grid = build_grid(domain, 1.0 / 21.0)
    pairs = PairSet.build(grid, KernelParams(sigma=0.1, epsilon=0.2, mu=0.1))
    constant = nl_diffusion(Field(np.full(grid.n_points, 2.0), grid), pairs).values
    assert np.max(np.abs(constant)) < 1e-12

    center = int(np.argmin(np.abs(grid.points[:, 0] - 0.5)))
    assert grid.points[center, 0] == pytest.approx(0.5)
    linear = nl_diffusion(Field(grid.points[:, 0].copy(), grid), pairs).values
    assert abs(linear[center]) < 1e-12


def test_diffusion_radius_option(pairs_1d, rng):
    u = Field(rng.standard_normal(pairs_1d.grid.n_points), pairs_1d.grid)
    default = nl_diffusion(u, pairs_1d).values
    assert np.array_equal(nl_diffusion(u, pairs_1d, radius=0.2).values, default)
    assert not np.allclose(nl_diffusion(u, pairs_1d, radius=0.1).values, default)
    with pytest.raises(StructuralError):
        nl_diffusion(u, pairs_1d, radius=0.3)


@pytest.mark.parametrize("pairs_name", ["pairs_1d", "pairs_2d"])
def test_gauss_theorem(pairs_name, request, rng):
    pairs = request.getfixturevalue(pairs_name)
    grid = pairs.grid
    w = grid.weights
    for _ in range(100):
        nu = random_two_point(pairs, rng)
        inside = w[grid.interior] * nl_divergence(nu, grid).values[grid.interior]
        shell = w[~grid.interior] * nl_interaction(nu, grid)
        scale = np.abs(inside).sum() + np.abs(shell).sum()
        assert abs(inside.sum() - shell.sum()) / scale < 1e-12


def test_energy_norm_brute_force(tiny_pairs, pairs_1d, rng):
    for pairs in (tiny_pairs, pairs_1d):
        grid = pairs.grid
        params = pairs.params
        u = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        x = grid.points[:, 0]
        terms = []
        for i in range(grid.n_points):
            for j in range(grid.n_points):
                # alpha vanishes beyond epsilon
                d_star = -(u.values[j] - u.values[i]) * alpha(params, x[i], x[j])
                terms.append(grid.weights[i] * grid.weights[j] * d_star * d_star)
        expected = math.sqrt(0.5 * math.fsum(terms))
        assert energy_norm(u, pairs) == pytest.approx(expected, rel=1e-12)


def test_energy_norm_is_a_seminorm(pairs_1d):
    grid = pairs_1d.grid
    assert energy_norm(Field.zeros(grid), pairs_1d) == 0.0
    assert energy_norm(Field(np.full(grid.n_points, 1.5), grid), pairs_1d) == 0.0


def test_bilinear_form_identities(pairs_1d, rng):
    grid = pairs_1d.grid
    beta, delta = 0.7, 0.05
    for _ in range(100):
        u = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        v = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        norm_u = energy_norm(u, pairs_1d)
        a_uu = bilinear_a(u, u, pairs_1d, delta, beta)
        assert a_uu == pytest.approx(beta * norm_u**2 + delta * l2_norm(u) ** 2, rel=1e-12)
        assert a_uu >= beta * norm_u**2
        assert bilinear_a(u, v, pairs_1d, delta, beta) == pytest.approx(bilinear_a(v, u, pairs_1d, delta, beta),
                                                                        rel=1e-12)
        assert norm_u**2 == pytest.approx(bilinear_a(u, u, pairs_1d, 0.0, 1.0), rel=1e-13)
    assert bilinear_a(u, Field.zeros(grid), pairs_1d, delta, beta) == 0.0


def test_bilinear_form_is_bounded(pairs_1d, rng):
    grid = pairs_1d.grid
    beta, delta = 1.0, 0.05
    c1 = estimate_equivalence_constants(pairs_1d).c1
    for _ in range(50):
        u = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        v = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        bound = (beta + delta / c1**2) * energy_norm(u, pairs_1d) * energy_norm(v, pairs_1d)
        assert abs(bilinear_a(u, v, pairs_1d, delta, beta)) <= bound * (1 + 1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("pairs_name", ["pairs_1d", "pairs_2d"])
def test_norm_equivalence_brackets_random_fields(pairs_name, request, rng):
    pairs = request.getfixturevalue(pairs_name)
    grid = pairs.grid
    constants = estimate_equivalence_constants(pairs)
    assert 0.0 < constants.c1 <= constants.c2
    for _ in range(1000):
        u = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        ratio = energy_norm(u, pairs) / l2_norm(u)
        assert constants.c1 * (1 - 1e-8) <= ratio <= constants.c2 * (1 + 1e-8)


def test_dual_norm_bound(pairs_1d, rng):
    grid = pairs_1d.grid
    for _ in range(50):
        f = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        v = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
        pairing = float(np.sum(grid.weights * f.values * v.values))
        assert abs(pairing) <= dual_norm_upper_bound(f) * l2_norm(v) * (1 + 1e-12)


def test_norm_equivalence_single_interior_point(tiny_pairs):
    grid = tiny_pairs.grid
    constants = estimate_equivalence_constants(tiny_pairs)
    e1 = Field.from_interior(grid, np.ones(1))
    expected = energy_norm(e1, tiny_pairs) / l2_norm(e1)
    assert constants.c1 == pytest.approx(expected, rel=1e-8)
    assert constants.c2 == pytest.approx(expected, rel=1e-8)


def test_assembled_operator(pairs_1d):
    operator = assemble_operator(pairs_1d, beta=2.0)
    matrix = operator.matrix.toarray()
    assert np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-14)
    assert np.all(np.diag(matrix) < 0)
    assert np.all(np.linalg.eigvalsh(matrix) < 0)
    interior = pairs_1d.grid.interior_indices
    expected_diag = -2.0 * pairs_1d.row_integral[interior] + 2.0 * 0.05 * pairs_1d.params.normalization
    assert np.allclose(np.diag(matrix), expected_diag)

    lines = operator.to_coordinate_text().splitlines()
    assert len(lines) == operator.matrix.nnz
    parsed = [line.split() for line in lines]
    assert all(len(fields) == 3 for fields in parsed)
    rebuilt = np.zeros_like(matrix)
    for row, col, value in parsed:
        rebuilt[int(row), int(col)] = float(value)
    assert np.array_equal(rebuilt, matrix)


def test_operator_matches_diffusion(pairs_1d, rng):
    grid = pairs_1d.grid
    u = Field.from_interior(grid, rng.standard_normal(grid.n_interior))
    operator = assemble_operator(pairs_1d, beta=1.0)
    assert np.allclose(operator.matrix @ u.interior_values, nl_diffusion(u, pairs_1d).interior_values,
                       rtol=0.0, atol=1e-12)


def test_fields_must_share_the_grid(pairs_1d, tiny_pairs):
    with pytest.raises(StructuralError):
        nl_adjoint_gradient(Field.zeros(tiny_pairs.grid), pairs_1d)
    with pytest.raises(StructuralError):
        Field(np.zeros(3), pairs_1d.grid)


def _grid_pairs(dim, h):
    domain = Domain(dim=dim, lower=(0.0,) * dim, upper=(1.0,) * dim, epsilon=0.2)
    return PairSet.build(build_grid(domain, h), KernelParams(sigma=0.1, epsilon=0.2, mu=0.1, dim=dim))


@pytest.mark.parametrize("dim, h", [(1, 0.05), (1, 0.01), (2, 0.1)])
def test_norm_equivalence_is_attained_by_extreme_eigenvectors(dim, h):
    pairs = _grid_pairs(dim, h)
    grid = pairs.grid
    constants = estimate_equivalence_constants(pairs)
    assert constants.method == ("dense" if grid.n_interior <= 64 else "arpack")
    spectrum, vectors = np.linalg.eigh((-pairs.interior_laplacian).toarray())
    assert constants.c1 == pytest.approx(math.sqrt(spectrum[0]), rel=1e-10)
    assert constants.c2 == pytest.approx(math.sqrt(spectrum[-1]), rel=1e-10)
    for column in (0, -1):
        u = Field.from_interior(grid, vectors[:, column])
        ratio = energy_norm(u, pairs) / l2_norm(u)
        assert constants.c1 * (1 - 1e-8) <= ratio <= constants.c2 * (1 + 1e-8)
