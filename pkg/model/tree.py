"""
依赖树模块

依赖树描述嵌套结构：内部节点携带 alpha ∈ (0,1]，叶子为空间变量（带宽 tau > 0）。
两层模型为根节点 alpha_0 + 各变量节点 alpha_k；三层模型再加一层簇节点 alpha_t。
树可以任意深度，递归均为深度优先。

JSON 格式：
    内部节点 {"alpha": a, "children": [...]}，可选 "name"
    叶子     {"leaf": "CO", "tau": 3.0}
    叶子简写 {"leaf": "CO", "tau": 3.0, "alpha": 0.4} 等价于只含该叶子的内部节点

参数命名：根为 alpha_0，其余内部节点按从 1 开始的子节点路径命名（alpha_1、alpha_1_2），
带宽为 tau_<叶子名>。
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from utils.errors import LookupFailure, ValidationError

INTERNAL_KEYS = {"alpha", "children", "name"}
LEAF_KEYS = {"leaf", "tau", "alpha"}


@dataclass(frozen=True)
class TreeNode:
    """树节点：内部节点（alpha + children）或叶子（leaf + tau）"""

    alpha: Optional[float] = None
    children: Tuple["TreeNode", ...] = ()
    leaf: Optional[str] = None
    tau: Optional[float] = None
    name: str = ""

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


@dataclass(frozen=True)
class PathProduct:
    """根到叶子路径上 alpha 的乘积"""

    leaf: str
    product: float


@dataclass(frozen=True)
class DependenceTree:
    """依赖树"""

    root: TreeNode
    leaves: Tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(n.leaf for n in _iter_leaves(self.root)))
        paths: Dict[str, Tuple[TreeNode, ...]] = {}
        nodes: Dict[str, TreeNode] = {}
        for node, ancestors in _walk(self.root, ()):
            if node.is_leaf:
                paths.setdefault(node.leaf, ancestors)
            else:
                nodes.setdefault(node.name, node)
        object.__setattr__(self, "_paths", paths)
        object.__setattr__(self, "_nodes", nodes)

    # ── 构造与序列化 ────────────────────────────────────────────

    @classmethod
    def from_dict(cls, spec: Mapping, validate: bool = True) -> "DependenceTree":
        """
        从嵌套 JSON 字典构造依赖树

        Args:
            spec: 根节点（alpha_0 节点）字典
            validate: 为 True 时发现任何违规即抛出 ValidationError

        Returns:
            DependenceTree
        """
        problems: List[str] = []
        root = _parse_node(spec, "alpha_0", (), problems, is_root=True)
        if problems:
            raise ValidationError("依赖树格式错误", problems)
        tree = cls(root)
        if validate:
            violations = tree.validate()
            if violations:
                raise ValidationError("依赖树校验失败", violations)
        return tree

    def to_dict(self) -> dict:
        """序列化为 JSON 字典（展开叶子简写）"""
        return _node_to_dict(self.root)

    def with_parameters(self, alphas: Optional[Mapping[str, float]] = None,
                        taus: Optional[Mapping[str, float]] = None) -> "DependenceTree":
        """返回替换了部分 alpha / tau 的新树，未提及的参数保持不变"""
        alphas = dict(alphas or {})
        taus = {_strip_tau(k): v for k, v in (taus or {}).items()}
        unknown = [k for k in alphas if k not in self._nodes]
        unknown += [k for k in taus if k not in self._paths]
        if unknown:
            raise LookupFailure(f"未知参数: {', '.join(unknown)}")
        return DependenceTree(_replace(self.root, alphas, taus))

    # ── 校验 ────────────────────────────────────────────────────

    def validate(self) -> List[str]:
        """检查所有不变量，返回全部违规描述（空列表表示通过）"""
        return validate(self)

    # ── 查询 ────────────────────────────────────────────────────

    def _path(self, leaf: str) -> Tuple[TreeNode, ...]:
        try:
            return self._paths[leaf]
        except KeyError:
            raise LookupFailure(f"未知叶子: {leaf}") from None

    def node(self, name: str) -> TreeNode:
        try:
            return self._nodes[name]
        except KeyError:
            raise LookupFailure(f"未知节点: {name}") from None

    def tau(self, leaf: str) -> float:
        self._path(leaf)
        for n in _iter_leaves(self.root):
            if n.leaf == leaf:
                return float(n.tau)
        raise LookupFailure(f"未知叶子: {leaf}")

    @property
    def taus(self) -> Dict[str, float]:
        return {n.leaf: float(n.tau) for n in _iter_leaves(self.root)}

    @property
    def alphas(self) -> Dict[str, float]:
        """内部节点 alpha，先序"""
        return {n.name: float(n.alpha) for n in self.internal_nodes()}

    def internal_nodes(self, order: str = "pre") -> List[TreeNode]:
        """内部节点列表，order 为 "pre"（先序）或 "post"（后序，自底向上）"""
        result: List[TreeNode] = []

        def visit(node: TreeNode):
            if node.is_leaf:
                return
            if order == "pre":
                result.append(node)
            for child in node.children:
                visit(child)
            if order == "post":
                result.append(node)

        visit(self.root)
        return result

    def path_nodes(self, leaf: str) -> List[str]:
        """根到叶子父节点的内部节点名"""
        return [n.name for n in self._path(leaf)]

    def path_product(self, leaf: str) -> PathProduct:
        return path_product(self, leaf)

    def path_exponents(self, leaf: str) -> List[Tuple[str, float]]:
        """
        复合振幅中各祖先振幅的指数

        叶子 k 的复合振幅为 prod_i A_i^{e_i}，其中 e_i = 1 / (路径上节点 i 以下各 alpha 之积)，
        最深的节点指数为 1。三层时即 A_{t;k} A_t^{1/alpha_{t;k}} A_0^{1/(alpha_{t;k} alpha_t)}。
        """
        path = self._path(leaf)
        exponents: List[Tuple[str, float]] = []
        below = 1.0
        for node in reversed(path):
            exponents.append((node.name, 1.0 / below))
            below *= float(node.alpha)
        exponents.reverse()
        return exponents

    def mrca_product(self, leaf_a: str, leaf_b: str) -> float:
        return mrca_product(self, leaf_a, leaf_b)

    def descendant_leaves(self, name: str) -> List[str]:
        """节点下的全部叶子"""
        return [n.leaf for n in _iter_leaves(self.node(name))]

    def layers(self) -> int:
        """最长根-叶路径上的内部节点数（两层模型为 2）"""
        return max(len(p) for p in self._paths.values())

    def parameter_names(self) -> List[str]:
        return list(self.alphas) + [f"tau_{leaf}" for leaf in self.leaves]


# ── 操作 ────────────────────────────────────────────────────────


def validate(tree: DependenceTree) -> List[str]:
    """
    检查依赖树的全部不变量

    Returns:
        违规描述列表；不抛异常
    """
    violations: List[str] = []
    if tree.root.is_leaf:
        violations.append("根节点必须是内部节点（alpha_0 节点）")
    seen: Dict[str, int] = {}
    for node, _ in _walk(tree.root, ()):
        if node.is_leaf:
            if not isinstance(node.leaf, str) or not node.leaf:
                violations.append(f"叶子名必须为非空字符串: {node.leaf!r}")
            else:
                seen[node.leaf] = seen.get(node.leaf, 0) + 1
            if not _is_positive(node.tau):
                violations.append(f"叶子 {node.leaf} 的带宽 tau 必须 > 0: {node.tau!r}")
        else:
            if not _in_unit(node.alpha):
                violations.append(f"节点 {node.name} 的 alpha 超出 (0,1]: {node.alpha!r}")
            if len(node.children) < 1:
                violations.append(f"节点 {node.name} 没有子节点")
    for leaf, count in seen.items():
        if count > 1:
            violations.append(f"叶子名重复: {leaf} 出现 {count} 次")
    if not tree.leaves:
        violations.append("依赖树没有叶子")
    return violations


def path_product(tree: DependenceTree, leaf: str) -> PathProduct:
    """根到叶子的 alpha 乘积"""
    product = 1.0
    for node in tree._path(leaf):
        product *= float(node.alpha)
    return PathProduct(leaf=leaf, product=product)


def mrca_product(tree: DependenceTree, leaf_a: str, leaf_b: str) -> float:
    """
    根到两叶子最近公共祖先（含）的 alpha 乘积

    同一叶子返回完整路径乘积；对称。
    """
    path_a = tree._path(leaf_a)
    path_b = tree._path(leaf_b)
    if leaf_a == leaf_b:
        return path_product(tree, leaf_a).product
    product = 1.0
    for node_a, node_b in zip(path_a, path_b):
        if node_a is not node_b:
            break
        product *= float(node_a.alpha)
    return product


# ── 内部工具 ────────────────────────────────────────────────────


def _is_positive(value) -> bool:
    try:
        return float(value) > 0.0 and float(value) < float("inf")
    except (TypeError, ValueError):
        return False


def _in_unit(value) -> bool:
    try:
        return 0.0 < float(value) <= 1.0
    except (TypeError, ValueError):
        return False


def _walk(node: TreeNode, ancestors: Tuple[TreeNode, ...]) -> Iterator[Tuple[TreeNode, Tuple[TreeNode, ...]]]:
    yield node, ancestors
    if not node.is_leaf:
        for child in node.children:
            yield from _walk(child, ancestors + (node,))


def _iter_leaves(node: TreeNode) -> Iterator[TreeNode]:
    for n, _ in _walk(node, ()):
        if n.is_leaf:
            yield n


def _child_name(path: Sequence[int]) -> str:
    return "alpha_" + "_".join(str(i) for i in path)


def _parse_node(spec, name: str, path: Tuple[int, ...], problems: List[str],
                is_root: bool = False) -> TreeNode:
    if not isinstance(spec, Mapping):
        problems.append(f"{name}: 节点必须是 JSON 对象，收到 {type(spec).__name__}")
        return TreeNode(alpha=None, name=name)

    if "leaf" in spec:
        unknown = sorted(set(spec) - LEAF_KEYS)
        if unknown:
            problems.append(f"叶子 {spec.get('leaf')}: 未知字段 {', '.join(unknown)}")
        leaf = TreeNode(leaf=spec.get("leaf"), tau=spec.get("tau"))
        if "alpha" in spec:
            return TreeNode(alpha=spec["alpha"], children=(leaf,), name=name)
        if is_root:
            problems.append("根节点必须是内部节点（alpha_0 节点）")
        return leaf

    unknown = sorted(set(spec) - INTERNAL_KEYS)
    if unknown:
        problems.append(f"{name}: 未知字段 {', '.join(unknown)}")
    children_spec = spec.get("children", [])
    if not isinstance(children_spec, Sequence) or isinstance(children_spec, (str, bytes)):
        problems.append(f"{name}: children 必须是列表")
        children_spec = []
    node_name = str(spec.get("name") or name)
    children = tuple(
        _parse_node(child, _child_name(path + (i + 1,)), path + (i + 1,), problems)
        for i, child in enumerate(children_spec)
    )
    return TreeNode(alpha=spec.get("alpha"), children=children, name=node_name)


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"leaf": node.leaf, "tau": node.tau}
    return {
        "alpha": node.alpha,
        "name": node.name,
        "children": [_node_to_dict(c) for c in node.children],
    }


def _replace(node: TreeNode, alphas: Mapping[str, float], taus: Mapping[str, float]) -> TreeNode:
    if node.is_leaf:
        tau = taus.get(node.leaf, node.tau)
        return TreeNode(leaf=node.leaf, tau=float(tau))
    return TreeNode(
        alpha=float(alphas.get(node.name, node.alpha)),
        children=tuple(_replace(c, alphas, taus) for c in node.children),
        name=node.name,
    )


def _strip_tau(key: str) -> str:
    return key[4:] if key.startswith("tau_") else key
