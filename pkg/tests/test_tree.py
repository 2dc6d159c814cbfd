import pytest

from model.tree import DependenceTree, mrca_product, path_product, validate
from utils.errors import LookupFailure, ValidationError


def test_parameter_names_follow_child_paths(deep_tree):
    assert deep_tree.parameter_names() == [
        "alpha_0", "alpha_1", "alpha_1_1", "alpha_1_2",
        "alpha_2", "alpha_2_1", "alpha_2_2",
        "tau_Z11", "tau_Z12", "tau_Z21", "tau_Z22",
    ]
    assert deep_tree.leaves == ("Z11", "Z12", "Z21", "Z22")
    assert deep_tree.layers() == 3


def test_path_product_three_layers(deep_tree):
    assert path_product(deep_tree, "Z11").product == pytest.approx(0.9 * 0.7 * 0.4)


def test_mrca_products(deep_tree):
    assert mrca_product(deep_tree, "Z11", "Z11") == pytest.approx(0.252)
    assert mrca_product(deep_tree, "Z11", "Z12") == pytest.approx(0.63)
    assert mrca_product(deep_tree, "Z11", "Z21") == pytest.approx(0.9)
    assert mrca_product(deep_tree, "Z21", "Z11") == mrca_product(deep_tree, "Z11", "Z21")


def test_path_exponents(deep_tree):
    exps = dict(deep_tree.path_exponents("Z11"))
    assert exps["alpha_1_1"] == pytest.approx(1.0)
    assert exps["alpha_1"] == pytest.approx(1 / 0.4)
    assert exps["alpha_0"] == pytest.approx(1 / (0.4 * 0.7))


def test_internal_node_orders(deep_tree):
    pre = [n.name for n in deep_tree.internal_nodes()]
    post = [n.name for n in deep_tree.internal_nodes(order="post")]
    assert pre[0] == "alpha_0"
    assert post[-1] == "alpha_0"
    assert post.index("alpha_1_1") < post.index("alpha_1")
    assert sorted(pre) == sorted(post)


def test_validate_reports_all_violations():
    tree = DependenceTree.from_dict({
        "alpha": 1.2,
        "children": [{"leaf": "A", "tau": 1.0}, {"leaf": "A", "tau": -1.0}],
    }, validate=False)
    problems = validate(tree)
    assert any("alpha" in p for p in problems)
    assert any("tau" in p for p in problems)
    assert any("叶子名重复" in p for p in problems)
    with pytest.raises(ValidationError) as info:
        DependenceTree.from_dict(tree.to_dict())
    assert len(info.value.violations) == 3


def test_single_leaf_under_root_is_valid():
    tree = DependenceTree.from_dict({"alpha": 0.5, "children": [{"leaf": "X", "tau": 1.0}]})
    assert validate(tree) == []
    assert tree.path_product("X").product == pytest.approx(0.5)


def test_alpha_zero_rejected_and_one_allowed():
    with pytest.raises(ValidationError):
        DependenceTree.from_dict({"alpha": 0.0, "children": [{"leaf": "X", "tau": 1.0}]})
    tree = DependenceTree.from_dict({"alpha": 1.0, "children": [{"leaf": "X", "tau": 1.0}]})
    assert tree.alphas == {"alpha_0": 1.0}


def test_unknown_field_rejected():
    with pytest.raises(ValidationError):
        DependenceTree.from_dict({"alpha": 0.5, "kids": []})


def test_root_leaf_without_alpha_rejected():
    with pytest.raises(ValidationError):
        DependenceTree.from_dict({"leaf": "X", "tau": 1.0})


def test_roundtrip_and_with_parameters(t1_tree):
    again = DependenceTree.from_dict(t1_tree.to_dict())
    assert again.parameter_names() == t1_tree.parameter_names()
    assert again.alphas == t1_tree.alphas

    updated = t1_tree.with_parameters(alphas={"alpha_0": 0.3}, taus={"tau_Z1": 2.0, "Z2": 1.5})
    assert updated.alphas["alpha_0"] == 0.3
    assert updated.taus == {"Z1": 2.0, "Z2": 1.5}
    assert t1_tree.alphas["alpha_0"] == 0.5


def test_unknown_lookups(t1_tree):
    with pytest.raises(LookupFailure):
        t1_tree.path_product("nope")
    with pytest.raises(LookupFailure):
        t1_tree.with_parameters(alphas={"alpha_9": 0.5})


def test_descendant_leaves(deep_tree):
    assert deep_tree.descendant_leaves("alpha_2") == ["Z21", "Z22"]
    assert deep_tree.descendant_leaves("alpha_0") == list(deep_tree.leaves)
