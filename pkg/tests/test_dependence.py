import numpy as np
import pytest

from model.dependence import (
    MARGINALIZED,
    EvaluationPoint,
    exponent,
    extremal_coefficient,
    extremal_coefficient_matrix,
    extremal_curve,
    joint_cdf,
    pair_exponent,
)
from model.kernel import KernelBasis, Site, leaf_bases, make_regular_grid
from model.simulate import conditional_cdf_monte_carlo
from model.tree import DependenceTree
from utils.errors import DomainError


@pytest.fixture
def deep_bases(deep_tree):
    grid = make_regular_grid((0.0, 1.0, 0.0, 1.0), 10, 10)
    return leaf_bases(deep_tree, grid)


def _random_point(tree, rng, n_sites=2):
    sites = rng.uniform(0.0, 1.0, size=(n_sites, 2))
    levels = {leaf: rng.uniform(0.5, 3.0, size=n_sites) for leaf in tree.leaves}
    return EvaluationPoint.from_levels(sites, levels)


def test_homogeneity(deep_tree, deep_bases, rng):
    point = _random_point(deep_tree, rng, 3)
    v = exponent(deep_tree, deep_bases, point)
    for t in (0.5, 2.0, 7.0):
        assert exponent(deep_tree, deep_bases, point.scaled(t)) == pytest.approx(v / t, rel=1e-12)


def test_marginal_constraint(deep_tree, deep_bases):
    sites = [Site(0.2, 0.3), Site(0.8, 0.6)]
    z = 2.5
    levels = {"Z12": [MARGINALIZED, z]}
    point = EvaluationPoint.from_levels(sites, levels)
    assert exponent(deep_tree, deep_bases, point) == pytest.approx(1.0 / z, rel=1e-12)

    levels = {"Z11": [np.inf, np.inf], "Z21": [np.inf, z]}
    point = EvaluationPoint.from_levels(sites, levels)
    assert exponent(deep_tree, deep_bases, point) == pytest.approx(1.0 / z, rel=1e-12)


def test_nonpositive_level_rejected(deep_tree):
    with pytest.raises(DomainError):
        EvaluationPoint.from_levels([Site(0.0, 0.0)], {"Z11": [0.0]})
    with pytest.raises(DomainError):
        EvaluationPoint.from_levels([Site(0.0, 0.0)], {"Z11": [-1.0]})


def test_all_alphas_one_is_independence(small_grid):
    tree = DependenceTree.from_dict({
        "alpha": 1.0,
        "children": [{"leaf": "A", "tau": 0.4, "alpha": 1.0}, {"leaf": "B", "tau": 0.2}],
    })
    bases = leaf_bases(tree, small_grid)
    sites = [Site(0.1, 0.1), Site(0.9, 0.4)]
    point = EvaluationPoint.from_levels(sites, {"A": [1.5, 2.0], "B": [0.7, 4.0]})
    expected = 1 / 1.5 + 1 / 2.0 + 1 / 0.7 + 1 / 4.0
    assert exponent(tree, bases, point) == pytest.approx(expected, rel=1e-12)
    assert joint_cdf(tree, bases, point) == pytest.approx(np.exp(-expected))


def test_coincident_site_limits(deep_tree, deep_bases):
    s = Site(0.5, 0.5)
    same = extremal_coefficient(deep_tree, deep_bases, "Z11", s, "Z11", s).value
    intra = extremal_coefficient(deep_tree, deep_bases, "Z11", s, "Z12", s).value
    inter = extremal_coefficient(deep_tree, deep_bases, "Z11", s, "Z21", s).value
    assert same == pytest.approx(2 ** 0.252, rel=1e-10)
    assert intra == pytest.approx(2 ** 0.63, rel=1e-10)
    assert inter == pytest.approx(2 ** 0.9, rel=1e-10)


def test_extremal_coefficient_equals_pair_exponent(deep_tree, deep_bases):
    s_i, s_j = Site(0.2, 0.4), Site(0.35, 0.45)
    for leaf_b in ("Z11", "Z12", "Z21"):
        theta = extremal_coefficient(deep_tree, deep_bases, "Z11", s_i, leaf_b, s_j).value
        assert theta == pytest.approx(pair_exponent(deep_tree, deep_bases, "Z11", s_i, leaf_b, s_j),
                                      rel=1e-10)


def test_far_sites_independent(deep_tree, deep_bases):
    theta = extremal_coefficient(deep_tree, deep_bases, "Z11", Site(0.0, 0.0), "Z11", Site(1.0, 1.0))
    assert 1.9 < theta.value <= 2.0


def test_theta_matrix_symmetric_in_range(deep_tree, deep_bases):
    sites = np.array([[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]])
    matrix = extremal_coefficient_matrix(deep_tree, deep_bases, "Z11", "Z11", sites)
    assert matrix.shape == (3, 3)
    assert np.allclose(matrix, matrix.T)
    assert np.all((matrix >= 1.0) & (matrix <= 2.0))
    assert np.allclose(np.diag(matrix), 2 ** 0.252)


def test_extremal_curve_sorted_by_distance(deep_tree, deep_bases):
    sites = {"a": Site(0.5, 0.5), "b": Site(0.9, 0.9), "c": Site(0.6, 0.5)}
    curve = extremal_curve(deep_tree, deep_bases, "Z11", "Z12", sites, [("a", "b"), ("a", "c"), ("a", "a")])
    assert list(curve["site_j"]) == ["a", "c", "b"]
    assert curve["distance"].is_monotonic_increasing




def test_shared_basis_accepted(deep_tree):
    basis = KernelBasis(make_regular_grid((0.0, 1.0, 0.0, 1.0), 3, 3), 0.2)
    point = EvaluationPoint.from_levels([Site(0.5, 0.5)], {"Z11": [1.0]})
    assert exponent(deep_tree, basis, point) == pytest.approx(1.0)


def test_exponent_between_max_and_sum_of_reciprocals(deep_tree, deep_bases, rng):
    for _ in range(20):
        point = _random_point(deep_tree, rng, 3)
        inverse = np.concatenate([1.0 / z for z in point.levels.values()])
        v = exponent(deep_tree, deep_bases, point)
        assert inverse.max() * (1 - 1e-12) <= v <= inverse.sum() * (1 + 1e-12)


def test_single_cluster_collapses_to_two_layers(small_grid, rng):
    leaves = [{"leaf": "A", "tau": 0.3, "alpha": 0.5}, {"leaf": "B", "tau": 0.4, "alpha": 0.7}]
    three = DependenceTree.from_dict({"alpha": 0.8, "children": [{"alpha": 0.6, "children": leaves}]})
    two = DependenceTree.from_dict({"alpha": 0.8 * 0.6, "children": leaves})
    bases = leaf_bases(three, small_grid)
    for _ in range(5):
        point = _random_point(three, rng, 3)
        assert exponent(three, bases, point) == pytest.approx(exponent(two, bases, point), rel=1e-12)


ORACLE_TREES = {
    "two_layers": {"alpha": 0.6, "children": [{"leaf": "A", "tau": 0.5, "alpha": 0.5},
                                              {"leaf": "B", "tau": 0.3, "alpha": 0.8}]},
    "mixed_depth": {"alpha": 0.8, "children": [
        {"alpha": 0.6, "children": [{"leaf": "A", "tau": 0.4, "alpha": 0.7},
                                    {"leaf": "B", "tau": 0.6}]},
        {"leaf": "C", "tau": 0.5, "alpha": 0.5},
    ]},
    "two_clusters": {"alpha": 0.9, "children": [
        {"alpha": 0.7, "children": [{"leaf": "A", "tau": 0.5, "alpha": 0.4}]},
        {"alpha": 0.7, "children": [{"leaf": "B", "tau": 0.5, "alpha": 0.4}]},
    ]},
    "unbalanced": {"alpha": 0.7, "children": [
        {"leaf": "A", "tau": 0.4},
        {"alpha": 0.8, "children": [
            {"alpha": 0.5, "children": [{"leaf": "B", "tau": 0.3, "alpha": 0.6},
                                        {"leaf": "C", "tau": 0.5}]},
            {"leaf": "D", "tau": 0.2, "alpha": 0.9},
        ]},
    ]},
}


@pytest.mark.parametrize("name, seed", [("two_layers", 77), ("mixed_depth", 78),
                                        ("two_clusters", 79), ("unbalanced", 80)])
def test_exponent_matches_latent_monte_carlo(name, seed):
    rng = np.random.default_rng(seed)
    tree = DependenceTree.from_dict(ORACLE_TREES[name])
    bases = leaf_bases(tree, make_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2))
    point = _random_point(tree, rng, 2)
    expected = joint_cdf(tree, bases, point)
    estimate, se = conditional_cdf_monte_carlo(tree, bases, point, 100_000, rng)
    assert abs(estimate - expected) <= 3 * se + 1e-9


def test_marginalized_coordinates_match_latent_monte_carlo():
    rng = np.random.default_rng(81)
    tree = DependenceTree.from_dict(ORACLE_TREES["unbalanced"])
    bases = leaf_bases(tree, make_regular_grid((0.0, 1.0, 0.0, 1.0), 2, 2))
    sites = [Site(0.2, 0.3), Site(0.7, 0.4), Site(0.5, 0.9)]
    point = EvaluationPoint.from_levels(sites, {
        "A": [1.2, MARGINALIZED, 0.8],
        "B": [MARGINALIZED, MARGINALIZED, MARGINALIZED],
        "C": [2.0, 1.5, MARGINALIZED],
    })
    expected = joint_cdf(tree, bases, point)
    estimate, se = conditional_cdf_monte_carlo(tree, bases, point, 100_000, rng)
    assert abs(estimate - expected) <= 3 * se + 1e-9
