#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
spectragap 命令行入口 - 读取配置、运行分析流程并写出JSON报告

用法:
    spectragap <command> [--config 配置.json] [--set key.path=value]... [--out 报告.json]

退出码: 0 完成（包括不确定结论），1 配置错误，2 数值失败
"""

import argparse
import logging
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config_manager import COMMANDS, ConfigError, ConfigManager, home_dir
from export_manager import ExportManager
from mesh import GridFunction, build_grid, closure_values, compact_mask, full_mask, read_grid_function, \
    refinement_schedule
from potential_catalog import PotentialSpec, eval_catalog, thread_count
from quadratic_form import assemble, qv
from spectral_solver import principal_eig, reference_eigenvalue
from linear_solver import PSOR_MAX_SWEEPS
from capacity import cap, dyadic_family, mazya_ratio
from criticality import ClassifySettings, classify, domain_mask
from aap import construct_supersolution, improvement_check, picone_improve, supersolution_metadata, verify_aap
from potential_probes import balance_probe, oscillation_probe

__version__ = "1.0.0"
TOOL = "spectragap"
SCHEMA_VERSION = 1

logger = logging.getLogger(__name__)


def _init_logging():
    """初始化日志：写入 SPECTRAGAP_HOME（默认 ~/.spectragap），同时输出到标准错误"""
    from logging.handlers import RotatingFileHandler

    try:
        root = logging.getLogger()
        if getattr(root, "_spectragap_handlers", False):
            return
        level_name = os.environ.get("SPECTRAGAP_LOG_LEVEL", "INFO").upper()
        root.setLevel(getattr(logging, level_name, logging.INFO))

        fmt = logging.Formatter(
            "%(asctime)s %(levelname)s [%(name)s:%(lineno)d] %(message)s"
        )

        console = logging.StreamHandler(stream=sys.stderr)
        console.setFormatter(fmt)
        root.addHandler(console)
        root._spectragap_handlers = True

        base_dir = home_dir()
        os.makedirs(base_dir, exist_ok=True)
        log_path = os.path.join(base_dir, "spectragap.log")
        file_handler = RotatingFileHandler(
            log_path, maxBytes=2 * 1024 * 1024, backupCount=3, encoding="utf-8"
        )
        file_handler.setFormatter(fmt)
        root.addHandler(file_handler)

        def _excepthook(exctype, value, tb):
            logging.getLogger("uncaught").exception(
                "Uncaught exception", exc_info=(exctype, value, tb)
            )

        sys.excepthook = _excepthook

        logging.getLogger(__name__).debug("Logging initialized: %s", log_path)
    except Exception:
        # 日志初始化失败不能影响计算
        pass


class _Parser(argparse.ArgumentParser):
    """参数错误按配置错误处理（退出码1）"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: 错误: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=TOOL, description="Schrödinger 型二次型的临界性数值工具")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    parser.add_argument("command", choices=COMMANDS, help="要运行的分析流程")
    parser.add_argument("--config", help="JSON 配置文件")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖配置项，例如 --set grid.n=127（可重复，后者优先）")
    parser.add_argument("--out", help="报告路径，默认 <command>_report.json")
    parser.add_argument("--save-config", dest="save_config", metavar="PATH",
                        help="把合并、覆盖并校验后的配置写到 PATH（用于复现）")
    return parser


# ---------------------------------------------------------------- 配置到对象


def _grid(cfg: dict):
    g = cfg["grid"]
    return build_grid(g["dim"], g["extents"], g["n"], max_nodes=g["max_nodes"])


def _spec(cfg: dict) -> PotentialSpec:
    return PotentialSpec.from_config(cfg["potential"])


def _box(cfg: dict, key: str, grid):
    box = cfg.get(key)
    if box is None:
        raise ConfigError(f"{key}: 该命令需要一个盒子 [[a, b], ...]")
    try:
        return compact_mask(grid, box)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}")


def _profile(spec: dict, grid, key: str):
    """improve 命令的输入：常数1、线性坐标、幂函数或网格函数文件"""
    if "path" in spec:
        return read_grid_function(spec["path"])
    kind = spec.get("profile")
    axis = int(spec.get("axis", 0))
    if kind == "one":
        return closure_values(grid, lambda *x: np.ones_like(x[0]))
    if kind == "linear":
        return closure_values(grid, lambda *x: x[axis] - grid.extents[axis][0])
    if kind == "power":
        p = float(spec.get("exponent", 0.5))
        return closure_values(grid, lambda *x: (x[axis] - grid.extents[axis][0]) ** p)
    raise ConfigError(f"improve.{key}.profile: 未知的剖面 '{kind}'（可选 one/linear/power 或 path）")


def _export_vector(cfg: dict, exporter: ExportManager, fn: Optional[GridFunction]) -> Optional[str]:
    target = cfg["export"]["vector"]
    if not target or fn is None:
        return None
    return str(exporter.export(fn, target, cfg["export"]["format"], axis=cfg["export"]["axis"]))


# ---------------------------------------------------------------- 命令


def run_eigen(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    grid = _grid(cfg)
    form = assemble(grid, eval_catalog(_spec(cfg), grid), domain_mask(grid, cfg["domain"]))
    res = principal_eig(form, tol=cfg["eigen"]["tol"], maxit=cfg["eigen"]["maxit"])
    result = {
        "value": res.value,
        "residual": res.residual,
        "converged": res.converged,
        "iterations": res.iterations,
        "continuum_reference": reference_eigenvalue(grid),
        "nodes": form.mask.count,
        "vector_file": _export_vector(cfg, exporter, res.vector),
    }
    return result, {"eigen_tol": cfg["eigen"]["tol"], "eigen_maxit": cfg["eigen"]["maxit"]}, {}


def run_classify(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    grid = _grid(cfg)
    schedule = refinement_schedule(grid, cfg["grid"]["levels"], max_nodes=cfg["grid"]["max_nodes"])
    settings = ClassifySettings.from_config({**cfg["classify"], "eig_tol": cfg["eigen"]["tol"]})
    verdict = classify(_spec(cfg), schedule, K=cfg["K"], domain=cfg["domain"], settings=settings)
    witness_qv = None
    if verdict.witness is not None and verdict.evidence is None:
        witness_qv = next((l.witness_qv for l in reversed(verdict.levels) if l.witness_qv is not None), None)
    result = {
        "tag": verdict.tag,
        "fitted_rate": verdict.fitted_rate,
        "weight": verdict.weight,
        "witness_qv": witness_qv,
        "null_sequence_qv": verdict.evidence.qv_values if verdict.evidence is not None else None,
        "notes": verdict.notes,
        "witness_file": _export_vector(cfg, exporter, verdict.witness),
    }
    histories = {
        "gap": [[h, mu] for h, mu in verdict.gap_history],
        "levels": [
            {"h": l.h, "n": list(l.n), "gap": l.gap, "indefinite": l.indefinite,
             "witness_qv": l.witness_qv, "shift": l.shift}
            for l in verdict.levels
        ],
    }
    return result, {"eigen_tol": settings.eig_tol, **cfg["classify"]}, histories


def run_capacity(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    grid = _grid(cfg)
    domain = domain_mask(grid, cfg["domain"])
    K = _box(cfg, "K", grid) & domain
    options = cfg["capacity"]
    value, potential = cap(grid, K, domain=domain, omega=options["omega"], tol=options["tol"])
    result = {"capacity": value, "K_nodes": K.count, "potential_file": _export_vector(cfg, exporter, potential)}
    histories = {}
    if options["mazya"]:
        fld = eval_catalog(_spec(cfg), grid)
        family = dyadic_family(grid, options["min_cells"], domain)
        report = mazya_ratio(fld, family, grid=grid, domain=domain, tol=options["mazya_tol"])
        result["mazya"] = {"max_ratio": report.max_ratio, "flag": report.flag, "family_size": len(report.entries)}
        histories["mazya"] = [
            {"label": e.label, "ratio": e.ratio, "capacity": e.capacity, "integral": e.integral}
            for e in report.entries
        ]
    tolerances = {"psor_omega": options["omega"], "psor_tol": options["tol"], "psor_max_sweeps": PSOR_MAX_SWEEPS,
                  "mazya_tol": options["mazya_tol"]}
    return result, tolerances, histories


def run_aap(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    grid = _grid(cfg)
    options = cfg["aap"]
    spec = _spec(cfg)
    domain = domain_mask(grid, cfg["domain"]) if cfg["domain"] else None
    sup = construct_supersolution(spec, grid, options["m_levels"], options["truncations"], domain=domain,
                                  tol=cfg["eigen"]["tol"])
    form = assemble(grid, eval_catalog(spec, grid), sup.mask)
    report = verify_aap(form, sup, tol=options["gap_tol"])
    meta = supersolution_metadata(sup)
    target = cfg["export"]["vector"]
    result = {
        "gap": report.gap,
        "gap_ok": report.gap_ok,
        "battery_margin": report.battery_margin,
        "battery_ok": report.battery_ok,
        "passed": report.passed,
        "ball_min": meta["ball_min"],
        "residual_min": meta["residual_min"],
        "normalization_ball": meta["normalization_ball"],
        "supersolution_file": str(exporter.export_supersolution(sup.u, meta, target)) if target else None,
    }
    tolerances = {"eigen_tol": cfg["eigen"]["tol"], "gap_tol": options["gap_tol"],
                  "residual_tol": sup.residual_tol}
    return result, tolerances, {"schedule": meta["schedule"]}


def run_improve(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    grid = _grid(cfg)
    options = cfg["improve"]
    u1 = _profile(options["u1"], grid, "u1")
    u2 = _profile(options["u2"], grid, "u2")
    w = picone_improve(u1, u2, grid)
    form = assemble(grid, eval_catalog(_spec(cfg), grid), domain_mask(grid, cfg["domain"]))
    report = improvement_check(form, w, tol=options["gap_tol"])
    result = {
        "holds": report.holds,
        "gap": report.gap,
        "w_max": float(np.max(w.values)),
        "w_min": float(np.min(w.values)),
        "weight_file": _export_vector(cfg, exporter, w),
    }
    return result, {"gap_tol": options["gap_tol"], "eigen_tol": cfg["eigen"]["tol"]}, {}


def run_probe(cfg: dict, exporter: ExportManager) -> Tuple[dict, dict, dict]:
    options = cfg["probe"]
    if options["kind"] == "oscillation":
        report = oscillation_probe(options["c"], options["alpha"], options["beta"], options["epsilons"],
                                   dim=options["dim"], tol=options["tol"])
        result = {"kind": "oscillation", "slope": report.slope, "tail_slope": report.tail_slope,
                  "divergent": report.divergent}
        histories = {"integrals": [[e, v] for e, v in zip(report.epsilons, report.integrals)]}
        return result, {"slope_tol": options["tol"]}, histories
    if options["kind"] == "balance":
        grid = _grid(cfg)
        fld = eval_catalog(_spec(cfg), grid)
        K = _box(cfg, "K", grid)
        U = compact_mask(grid, options["U"]) if options["U"] is not None else full_mask(grid)
        report = balance_probe(fld, K, U, seed=options["seed"])
        result = {"kind": "balance", "best_constant_estimate": report.best_constant_estimate,
                  "battery_size": report.battery_size, "skipped": report.skipped, "verdict": report.verdict,
                  "witness_energy": qv(assemble(grid, fld), report.witness) if report.witness is not None else None}
        return result, {"seed": options["seed"]}, {}
    raise ConfigError(f"probe.kind: 未知的探测 '{options['kind']}'（可选 oscillation/balance）")


PIPELINES: Dict[str, Callable[[dict, ExportManager], Tuple[dict, dict, dict]]] = {
    "classify": run_classify,
    "eigen": run_eigen,
    "capacity": run_capacity,
    "aap": run_aap,
    "improve": run_improve,
    "probe": run_probe,
}


def run(command: str, config_path: Optional[str] = None, overrides: Optional[List[str]] = None,
        out: Optional[str] = None, save_config: Optional[str] = None) -> dict:
    """
    运行一个分析流程并写出报告

    Returns:
        报告字典（同时写入 out，默认 <command>_report.json）

    Raises:
        ValueError: 配置错误
        RuntimeError: 数值失败
    """
    if command not in PIPELINES:
        raise ConfigError(f"未知的命令 '{command}'")
    manager = ConfigManager(config_path)
    manager.load_config()
    manager.apply_overrides(overrides or [])
    cfg = manager.validate()
    if save_config:
        logger.info("已保存解析后的配置 %s", manager.save_config(save_config))
    logger.info("%s：开始（线程上限 %d）", command, thread_count())
    exporter = ExportManager()
    start = time.perf_counter()
    result, tolerances, histories = PIPELINES[command](cfg, exporter)
    report = {
        "tool": TOOL,
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "status": "completed",
        "config": cfg,
        "result": result,
        "tolerances": tolerances,
        "histories": histories,
        "wall_clock": time.perf_counter() - start,
    }
    path = exporter.export_report(report, out or f"{command}_report.json")
    logger.info("%s：完成，报告 %s", command, path)
    return report


def _summary(report: dict) -> str:
    result = report["result"]
    for key in ("tag", "value", "capacity", "passed", "holds", "verdict", "divergent"):
        if key in result:
            return f"{key}={result[key]}"
    return "completed"


def main(argv: Optional[List[str]] = None) -> int:
    """命令行入口，返回退出码"""
    _init_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    try:
        report = run(args.command, args.config, args.overrides, args.out, args.save_config)
    except ValueError as e:
        logger.error("配置错误: %s", e)
        print(f"{TOOL}: 配置错误: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        logger.error("数值计算失败: %s", e)
        print(f"{TOOL}: 数值计算失败: {e}", file=sys.stderr)
        return 2
    print(f"{args.command}: {_summary(report)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
