#!/usr/bin/env python3
"""
嵌套多元最大稳定过程 - 主入口

功能：
- simulate  按依赖树与核基精确模拟多元空间块最大值
- fit       (可选 GEV 边缘标准化后) 用 MH-MCMC 估计依赖参数，可多链并行
- extremal  导出模型极值系数曲线，给出数据时附带经验估计与置信区间
- diagnose  导出链的轨迹、ACF、ESS 与 split-R̂
- predict   空间最大值的后验预测分位数

使用方式：
    # 按预设模拟 T1 研究数据
    python main.py simulate --config presets/t1_study.json --out runs/t1

    # 拟合（数据已在单位 Fréchet 尺度），两条链
    python main.py fit --config presets/t1_study.json --data runs/t1/sample.csv --unit-frechet --chains 2

    # 极值系数曲线（参数取链的后验中位数）
    python main.py extremal --config presets/three_layer_fields.json

    # 链诊断
    python main.py diagnose --data runs/t1/chain_0.csv,runs/t1/chain_1.csv

    # 后验预测分位数（GEV 尺度需要 --margins）
    python main.py predict --config presets/t1_study.json --data runs/t1/chain_0.csv

退出码：0 成功 / 1 内部错误 / 2 校验失败 / 3 读写失败 / 4 数值失败
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from inference.diagnostics import (
    chain_diagnostics,
    chains_summary,
    empirical_extremal_coefficient,
    posterior_predictive_max_quantile,
    potential_scale_reduction,
)
from inference.margins import fit_margins_gev
from inference.mcmc import McmcConfig, PosteriorChain, Prior, run_chain
from model.dependence import extremal_coefficient
from model.kernel import Site, check_grid_spacing, leaf_bases, pairwise_distance
from model.simulate import simulate, to_gev
from storage.csv_storage import CsvStorage, read_frame
from utils.config import RunConfig
from utils.errors import (
    EXIT_INTERNAL,
    EXIT_NUMERICAL,
    EXIT_OK,
    NestedMaxError,
    DomainError,
    LookupFailure,
    ValidationError,
)
from utils.logger import get_logger, setup_logger
from utils.parser import MaximaDataset, read_dataset
from utils.rng import make_seed_sequence

VERSION = "1.0.0"

EXTREMAL_COLUMNS = ["leaf_a", "site_i", "leaf_b", "site_j", "distance", "theta_model",
                    "theta_empirical", "ci_low", "ci_high", "n_rep"]
DEFAULT_P_GRID = [0.5, 0.9, 0.917, 0.95, 0.99, 0.996]


# ── 公共步骤 ────────────────────────────────────────────────────


def build_overrides(args) -> dict:
    """命令行参数 -> 配置覆盖字典（命令行优先于配置文件）"""
    overrides: Dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["storage"] = {"output_dir": args.out}
    if args.unit_frechet:
        overrides["data"] = {"unit_frechet": True}
    if args.margins:
        overrides["margins"] = {"path": args.margins}
    return overrides


def resolve_seed(config: RunConfig) -> int:
    """未给种子时取新熵并记录，保证输出仍可复现"""
    if config.seed is not None:
        return int(config.seed)
    seed = int(make_seed_sequence(None).entropy % (2 ** 63))
    get_logger().warning("未指定种子，使用新生成的种子 %d（已写入溯源文件）", seed)
    return seed


def load_data(config: RunConfig, path: Optional[str]) -> Optional[MaximaDataset]:
    data_cfg = config.section("data")
    path = path or data_cfg.get("path")
    if not path:
        return None
    return read_dataset(path, coordinates=data_cfg.get("coordinates", "planar"),
                        require_positive=bool(data_cfg.get("unit_frechet", False)))


def sites_of(config: RunConfig, data: Optional[MaximaDataset]) -> Tuple[Tuple[str, ...], np.ndarray]:
    if data is not None:
        return tuple(data.site_ids), data.coords
    return config.sites()


def load_chain(path: str) -> PosteriorChain:
    frame = read_frame(path)
    missing = [c for c in ("iteration", "parameter_name", "value") if c not in frame.columns]
    if missing:
        raise ValidationError(f"链文件缺少列: {path}", missing)
    return PosteriorChain.from_long_frame(frame)


def load_margins(config: RunConfig):
    """GEV 边缘参数：margins.path 指向的参数表，或 margins 段的统一 (mu, sigma, xi)"""
    spec = config.section("margins")
    if spec.get("path"):
        table = read_frame(spec["path"])
        if "converged" in table.columns:
            table = table[table["converged"].astype(bool)]
        return table
    return config.gev_margins()


def standardize(data: MaximaDataset, config: RunConfig):
    """数据不在单位 Fréchet 尺度时逐单元拟合 GEV 并变换"""
    if config.section("data").get("unit_frechet", False):
        return data, None
    fit = fit_margins_gev(data.values, data.leaves, data.site_ids)
    return data.with_values(fit.frechet), fit


def _split_paths(text: Optional[str]) -> List[str]:
    return [p.strip() for p in (text or "").split(",") if p.strip()]


# ── simulate ────────────────────────────────────────────────────


def cmd_simulate(config: RunConfig, args) -> Dict:
    """精确模拟，写出样本长表与溯源文件"""
    logger = get_logger()
    tree = config.tree()
    site_ids, pts = config.sites()
    grid = config.grid(pts)
    bases = leaf_bases(tree, grid)
    if grid.L > 1:
        for basis in bases.values():
            check_grid_spacing(basis)
    sim = config.section("simulation")
    n_rep = int(sim.get("n_rep", 20))
    workers = int(args.workers or sim.get("workers", 1))
    margins = load_margins(config) if sim.get("scale", "frechet") == "gev" else None
    if sim.get("scale", "frechet") == "gev" and margins is None:
        raise ValidationError("simulation.scale = gev 需要 margins（--margins 或 margins 段）")
    seed = resolve_seed(config)

    logger.info("模拟: %d 个叶子, %d 个站点, %d 个核节点, %d 个重复",
                len(tree.leaves), len(site_ids), grid.L, n_rep)
    sample = simulate(tree, bases, pts, n_rep, seed=seed, site_ids=site_ids, workers=workers)
    if margins is not None:
        sample = to_gev(sample, margins)

    storage = CsvStorage(config.raw)
    storage.save_frame(sample.to_frame(), "sample")
    storage.save_provenance("simulate", config.digest, seed, VERSION,
                            extra={"n_rep": n_rep, "L": grid.L, "tree": tree.to_dict()})
    return {"n_rep": n_rep}


# ── fit ─────────────────────────────────────────────────────────


def _run_chain_job(job):
    """进程池任务：运行一条链"""
    data, tree, grid, prior, mcmc_config, seed_seq, dispersed, chain_id = job
    return run_chain(data, tree, grid, prior, mcmc_config, seed=seed_seq,
                     dispersed=dispersed, chain_id=chain_id)


def mcmc_config_of(config: RunConfig) -> Tuple[McmcConfig, int]:
    spec = dict(config.section("mcmc"))
    chains = int(spec.pop("chains", 1))
    try:
        return McmcConfig(**spec), chains
    except TypeError as e:
        raise ValidationError("mcmc 配置无效", [str(e)]) from e


def cmd_fit(config: RunConfig, args) -> Dict:
    """边缘标准化（可选）+ 多链 MH-MCMC，写出链、汇总与诊断"""
    logger = get_logger()
    tree = config.tree()
    data = load_data(config, args.data)
    if data is None:
        raise ValidationError("fit 需要数据（--data 或 data.path）")
    data = data.align_to(tree.leaves)
    mcmc_config, chains = mcmc_config_of(config)
    if args.chains:
        chains = int(args.chains)
    if chains < 1:
        raise ValidationError(f"链数必须 >= 1: {chains}")
    h_max = config.section("prior").get("h_max") or data.h_max
    prior = Prior(float(h_max))
    grid = config.grid(data.coords)
    seed = resolve_seed(config)
    mcmc_config.seed = seed

    data, margin_fit = standardize(data, config)
    missing = data.missing_report()
    logger.info("缺失值报告: 共 %d 个缺失值，%d / %d 个单元有缺失（似然中跳过）",
                int(missing["missing"].sum()), int((missing["missing"] > 0).sum()), len(missing))
    children = make_seed_sequence(seed).spawn(chains)
    jobs = [(data, tree, grid, prior, mcmc_config, children[i], i > 0, i) for i in range(chains)]
    workers = int(args.workers or 1)
    logger.info("拟合: %d 条链, R=%d, burn-in=%d, thinning=%d, h_max=%.4g",
                chains, mcmc_config.iterations, mcmc_config.burn_in, mcmc_config.thinning, h_max)
    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, chains)) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(job) for job in jobs]

    summary = chains_summary(results)
    summary["acceptance"] = {f"chain_{i}": c.acceptance for i, c in enumerate(results)}
    summary["data_digest"] = data.digest()
    summary["h_max"] = float(h_max)

    storage = CsvStorage(config.raw)
    if margin_fit is not None:
        storage.save_frame(margin_fit.table, "margins")
    for i, chain in enumerate(results):
        storage.save_frame(chain.to_long_frame(), f"chain_{i}")
    storage.save_frame(missing, "missing")
    storage.save_json(summary, "summary")
    storage.save_provenance("fit", config.digest, seed, VERSION,
                            extra={"chains": chains, "retained": [len(c) for c in results],
                                   "missing": int(missing["missing"].sum())})
    return summary


# ── extremal ────────────────────────────────────────────────────


def extremal_pairs(config: RunConfig, tree, site_ids: Sequence[str]) -> List[Tuple[str, str, str, str]]:
    """
    (leaf_a, site_i, leaf_b, site_j) 列表，去重并保持首次出现顺序

    extremal.pairs 缺省时取全部叶子对 x 站点对：同一叶子取编号 i < j 的站点对（编号不同、
    坐标重合的站点对也在其中，其 theta 即同叶子重合极限），不同叶子取 i <= j。
    """
    logger = get_logger()
    spec = config.section("extremal")
    if "pairs" in spec:
        raw = [tuple(str(v) for v in p) for p in spec["pairs"]]
        bad = [p for p in raw if len(p) != 4]
        if bad:
            raise ValidationError("extremal.pairs 每项必须是 [leaf_a, site_i, leaf_b, site_j]",
                                  [str(p) for p in bad])
    else:
        raw = []
        for leaf_a, leaf_b in config.leaf_pairs(list(tree.leaves)):
            for i, s_i in enumerate(site_ids):
                start = i + 1 if leaf_a == leaf_b else i
                raw += [(leaf_a, s_i, leaf_b, s_j) for s_j in site_ids[start:]]
    pairs = list(dict.fromkeys(raw))
    if len(pairs) < len(raw):
        logger.warning("配对列表有 %d 个重复项，已去重", len(raw) - len(pairs))
    unknown = sorted({leaf for p in pairs for leaf in (p[0], p[2]) if leaf not in tree.leaves})
    unknown_sites = sorted({s for p in pairs for s in (p[1], p[3]) if s not in site_ids})
    if unknown or unknown_sites:
        raise LookupFailure(f"配对中有未知叶子 {unknown} 或未知站点 {unknown_sites}")
    return pairs


def cmd_extremal(config: RunConfig, args) -> Dict:
    """模型极值系数（后验中位数或配置中的参数），有数据时附经验估计"""
    logger = get_logger()
    spec = config.section("extremal")
    tree = config.tree()
    if spec.get("chain"):
        medians = load_chain(spec["chain"]).median_parameters()
        tree = tree.with_parameters(
            alphas={k: v for k, v in medians.items() if not k.startswith("tau_")},
            taus={k: v for k, v in medians.items() if k.startswith("tau_")},
        )
        logger.info("使用链 %s 的后验中位数", spec["chain"])
    data = load_data(config, args.data or spec.get("data"))
    site_ids, pts = sites_of(config, data)
    grid = config.grid(pts)
    bases = leaf_bases(tree, grid)
    pairs = extremal_pairs(config, tree, list(site_ids))

    empirical_data = None
    if data is not None:
        data = data.align_to(tree.leaves) if set(data.leaves) == set(tree.leaves) else data
        estimator = spec.get("estimator", "madogram")
        empirical_data = data if estimator == "madogram" else standardize(data, config)[0]
        if data.n_rep < 20:
            raise DomainError(f"经验极值系数至少需要 20 个重复，数据只有 {data.n_rep} 个")

    sites = {sid: Site(float(x), float(y)) for sid, (x, y) in zip(site_ids, pts)}
    position = {sid: d for d, sid in enumerate(site_ids)}
    seed = resolve_seed(config)
    boot_streams = make_seed_sequence(seed).spawn(max(len(pairs), 1))
    rows = []
    for n, (leaf_a, s_i, leaf_b, s_j) in enumerate(pairs):
        theta = extremal_coefficient(tree, bases, leaf_a, sites[s_i], leaf_b, sites[s_j]).value
        row = [leaf_a, s_i, leaf_b, s_j, pairwise_distance(sites[s_i], sites[s_j]), theta,
               np.nan, np.nan, np.nan, np.nan]
        if empirical_data is not None and leaf_a in empirical_data.leaves and leaf_b in empirical_data.leaves:
            x = empirical_data.values[empirical_data.leaves.index(leaf_a), position[s_i]]
            y = empirical_data.values[empirical_data.leaves.index(leaf_b), position[s_j]]
            est = empirical_extremal_coefficient(
                x, y, pair=(leaf_a, s_i, leaf_b, s_j),
                estimator=spec.get("estimator", "madogram"), ci=spec.get("ci", "delta"),
                rng=np.random.default_rng(boot_streams[n]),
            )
            row[6:] = [est.estimate, est.ci_low, est.ci_high, est.n_rep]
        rows.append(row)
    frame = pd.DataFrame(rows, columns=EXTREMAL_COLUMNS)

    storage = CsvStorage(config.raw)
    storage.save_frame(frame, "extremal")
    storage.save_provenance("extremal", config.digest, seed, VERSION,
                            extra={"pairs": len(pairs), "parameters": dict(tree.alphas, **{
                                f"tau_{k}": v for k, v in tree.taus.items()})})
    return {"pairs": len(pairs)}


# ── diagnose ────────────────────────────────────────────────────


def cmd_diagnose(config: RunConfig, args) -> Dict:
    """链文件 -> 每个参数的轨迹、ACF 与 ESS 表；多条链时给出 split-R̂"""
    logger = get_logger()
    paths = _split_paths(args.data)
    if not paths:
        raise ValidationError("diagnose 需要链文件（--data，逗号分隔多个）")
    chains = [load_chain(p) for p in paths]
    names = chains[0].parameter_names + ["log_post"]

    outputs = []
    ess_rows = []
    for i, chain in enumerate(chains):
        for name in names:
            diag = chain_diagnostics(chain, name)
            ess_rows.append((i, name, len(diag.trace), diag.ess.value, diag.ess.degenerate))
            outputs.append((f"trace_chain{i}_{name}", diag.trace))
            outputs.append((f"acf_chain{i}_{name}", diag.acf))
    ess_frame = pd.DataFrame(ess_rows, columns=["chain", "parameter", "n", "ess", "degenerate"])

    rhat = None
    if len(chains) > 1:
        rhat = pd.DataFrame(
            [(name, potential_scale_reduction([c.values(name) for c in chains])) for name in names],
            columns=["parameter", "rhat"],
        )

    storage = CsvStorage(config.raw)
    for name, frame in outputs:
        storage.save_frame(frame, name, subdir="diagnostics")
    storage.save_frame(ess_frame, "ess", subdir="diagnostics")
    if rhat is not None:
        storage.save_frame(rhat, "rhat", subdir="diagnostics")
    storage.save_provenance("diagnose", config.digest, config.seed, VERSION,
                            extra={"chains": [os.path.basename(p) for p in paths]})
    logger.info("诊断完成: %d 条链, %d 个参数", len(chains), len(names))
    return {"chains": len(chains)}


# ── predict ─────────────────────────────────────────────────────


def cmd_predict(config: RunConfig, args) -> Dict:
    """空间最大值的后验预测分位数"""
    spec = config.section("predict")
    chain_path = args.data or spec.get("chain")
    if not chain_path:
        raise ValidationError("predict 需要链文件（--data 或 predict.chain）")
    tree = config.tree()
    site_ids, pts = config.sites()
    grid = config.grid(pts)
    margins = None
    if spec.get("gev", False):
        margins = load_margins(config)
        if margins is None:
            raise ValidationError("GEV 尺度预测需要边缘参数（--margins 或 margins 段）")
    leaves = [str(leaf) for leaf in spec.get("leaves", tree.leaves)]
    subset = None
    if "sites" in spec:
        wanted = [str(s) for s in spec["sites"]]
        unknown = [s for s in wanted if s not in site_ids]
        if unknown:
            raise LookupFailure(f"未知站点: {', '.join(unknown)}")
        subset = [site_ids.index(s) for s in wanted]
    labels = spec.get("labels")
    if labels is not None:
        labels = {float(k): str(v) for k, v in labels.items()}
    chain = load_chain(chain_path)
    seed = resolve_seed(config)

    table = posterior_predictive_max_quantile(
        chain, tree, grid, pts, leaves, spec.get("p_grid", DEFAULT_P_GRID),
        int(spec.get("n_sim", 100)), seed=seed, margins=margins, site_ids=site_ids,
        site_subset=subset, labels=labels, workers=int(args.workers or 1),
    )
    storage = CsvStorage(config.raw)
    storage.save_frame(table, "quantiles")
    storage.save_provenance("predict", config.digest, seed, VERSION,
                            extra={"leaves": leaves, "draws": len(chain)})
    return {"rows": len(table)}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "extremal": cmd_extremal,
    "diagnose": cmd_diagnose,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="嵌套多元最大稳定过程：模拟、MCMC 推断与依赖诊断",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例：
  python main.py simulate --config presets/t1_study.json --out runs/t1
  python main.py fit --config presets/t1_study.json --data runs/t1/sample.csv --unit-frechet
  python main.py extremal --config presets/three_layer_fields.json
  python main.py diagnose --data runs/t1/chain_0.csv
  python main.py predict --config presets/t1_study.json --data runs/t1/chain_0.csv
        """,
    )
    parser.add_argument("command", choices=sorted(COMMANDS),
                        help="子命令: simulate / fit / extremal / diagnose / predict")
    parser.add_argument("--config", default=None,
                        help="运行配置文件 (JSON / YAML)")
    parser.add_argument("--defaults", default="config.yaml",
                        help="应用默认配置 (默认: config.yaml)")
    parser.add_argument("--data", default=None,
                        help="数据文件；diagnose / predict 时为链文件（diagnose 可逗号分隔多个）")
    parser.add_argument("--out", default=None,
                        help="输出目录，覆盖 storage.output_dir")
    parser.add_argument("--seed", type=int, default=None,
                        help="主随机种子，覆盖配置中的 seed")
    parser.add_argument("--chains", type=int, default=None,
                        help="fit 的链数，覆盖 mcmc.chains")
    parser.add_argument("--workers", type=int, default=None,
                        help="并行工作数（结果与工作数无关）")
    parser.add_argument("--unit-frechet", action="store_true",
                        help="数据已在单位 Fréchet 尺度，跳过边缘拟合")
    parser.add_argument("--margins", default=None,
                        help="GEV 边缘参数表 (leaf, site_id, mu, sigma, xi)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    bootstrap = {"logging": {"log_dir": ""}}
    try:
        config = RunConfig.load(args.config, defaults_path=args.defaults,
                                overrides=build_overrides(args))
    except NestedMaxError as e:
        setup_logger(bootstrap)
        get_logger().error("配置错误: %s", e)
        return e.exit_code

    setup_logger(config.raw, command=args.command)
    logger = get_logger()
    logger.info("=" * 70)
    logger.info("嵌套多元最大稳定过程 %s 启动 (版本 %s)", args.command, VERSION)
    logger.info("配置: %s (摘要 %s)", config.source or "默认", config.digest[:12])
    logger.info("=" * 70)
    try:
        COMMANDS[args.command](config, args)
    except NestedMaxError as e:
        logger.error("%s 失败: %s", args.command, e)
        return e.exit_code
    except ArithmeticError as e:
        logger.error("%s 数值计算失败: %s", args.command, e, exc_info=True)
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error("%s 发生内部错误: %s", args.command, e, exc_info=True)
        return EXIT_INTERNAL
    logger.info("=" * 70)
    logger.info("%s 完成", args.command)
    logger.info("=" * 70)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
