#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
势函数探测 - 强平衡不等式的有限测试族探测，以及 σ_α w_β 的振荡可积性探测

探测只提供证据：有限测试族只能给出反例或经验下界，不能证明平衡性。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from mesh import Grid, GridFunction, Mask
from potential_catalog import PotentialError, PotentialField
from quadratic_form import DiscreteForm, assemble, qv

logger = logging.getLogger(__name__)

# 最优比值低于该值时报告为违反证据
VIOLATION_THRESHOLD = 0.05
SPIKE_SLOPES = (2.0, 4.0, 8.0, 16.0, 32.0)
SPIKE_CENTERS = 8
RANDOM_BUMPS = 16

# 振荡探测的面板宽度与每面板Gauss点数
PANEL_WIDTH = math.pi / 8.0
GAUSS_POINTS = 16
SLOPE_TOL = 0.03


@dataclass(frozen=True)
class BalanceReport:
    best_constant_estimate: float
    battery_size: int
    verdict: str
    witness: Optional[GridFunction] = field(default=None, repr=False)
    skipped: int = 0


def spike_battery(grid: Grid, K: Mask, slopes: Sequence[float] = SPIKE_SLOPES,
                  centers: int = SPIKE_CENTERS) -> List[GridFunction]:
    """以 K 中节点为中心的尖峰 (1 - k|x-x₀|)⁺"""
    indices = np.nonzero(K.bits)[0]
    if indices.size == 0:
        raise PotentialError("尖峰测试族需要非空的 K")
    chosen = indices[np.unique(np.linspace(0, indices.size - 1, min(centers, indices.size)).astype(int))]
    pts = grid.points()
    battery = []
    for index in chosen:
        dist = np.sqrt(np.sum((pts - pts[index][None, :]) ** 2, axis=1))
        for k in slopes:
            spike = np.maximum(1.0 - k * dist, 0.0)
            if np.any(spike > 0):
                battery.append(GridFunction(grid, spike))
    return battery


def bump_battery(grid: Grid, K: Mask, U: Mask, count: int = RANDOM_BUMPS, seed: int = 0) -> List[GridFunction]:
    """中心在 K 内、支集限制在 U 内的随机光滑鼓包"""
    rng = np.random.default_rng(seed)
    pts = grid.points()
    indices = np.nonzero(K.bits)[0]
    spans = np.array([b - a for a, b in grid.extents])
    battery = []
    for _ in range(count):
        center = pts[rng.choice(indices)]
        radius = spans * rng.uniform(0.05, 0.3, size=grid.dim)
        t = (pts - center[None, :]) / radius[None, :]
        bump = np.prod(np.maximum(1.0 - t * t, 0.0) ** 2, axis=1)
        bump = np.where(U.bits, bump, 0.0)
        if np.any(bump > 0):
            battery.append(GridFunction(grid, bump))
    return battery


def balance_probe(field: PotentialField, K: Mask, U: Mask, battery: Optional[List[GridFunction]] = None,
                  form: Optional[DiscreteForm] = None, threshold: float = VIOLATION_THRESHOLD,
                  seed: int = 0) -> BalanceReport:
    """
    强平衡不等式 c∫_K V⁺|ξ| ≤ √Q_V(ξ) + ∫_U|ξ| 的经验探测

    报告测试族上 (√Q_V(ξ) + ∫_U|ξ|)/∫_K V⁺|ξ| 的最小值，分母为0的测试函数跳过。

    Args:
        field: 势函数
        K: 紧集，必须包含于 U
        U: 开集
        battery: 测试函数族，默认为尖峰族加随机鼓包

    Raises:
        PotentialError: K ⊄ U，或跳过后测试族为空
    """
    grid = field.grid
    if not K.issubset(U):
        raise PotentialError("balance_probe: 要求 K ⊂ U")
    if battery is None:
        battery = spike_battery(grid, K) + bump_battery(grid, K, U, seed=seed)
    if not battery:
        raise PotentialError("balance_probe: 测试函数族为空")
    form = form if form is not None else assemble(grid, field)
    vol = grid.cellvol
    best = math.inf
    witness = None
    skipped = 0
    for xi in battery:
        x = np.abs(xi.values)
        denom = float(np.sum(field.vplus[K.bits] * x[K.bits])) * vol
        if denom <= 0.0:
            skipped += 1
            continue
        energy = qv(form, xi.values)
        ratio = (math.sqrt(max(energy, 0.0)) + float(np.sum(x[U.bits])) * vol) / denom
        if ratio < best:
            best, witness = ratio, xi
    if witness is None:
        raise PotentialError("balance_probe: 所有测试函数的分母 ∫_K V⁺|ξ| 都为0（平凡情形）")
    verdict = "violation-witness" if best <= threshold else "plausibly-balanced"
    logger.info("平衡探测：%d 个测试函数，最优常数估计 %.4g，结论 %s", len(battery) - skipped, best, verdict)
    return BalanceReport(best, len(battery) - skipped, verdict,
                         witness if verdict == "violation-witness" else None, skipped)


@dataclass(frozen=True)
class OscillationReport:
    slope: float
    tail_slope: float
    epsilons: List[float]
    integrals: List[float]
    divergent: bool


def sphere_abs_first_coordinate(dim: int) -> float:
    """单位球面上 ∫|ω₁| = 2π^{(N-1)/2}/Γ((N+1)/2)"""
    return 2.0 * math.pi ** ((dim - 1) / 2.0) / float(gamma_fn((dim + 1) / 2.0))


def _radial_integral(c: float, alpha: float, beta: float, eps: float, dim: int) -> float:
    """∫_ε^1 r^{N-3}|α r^α cos r^α - sin r^α|(r^β - 1) dr，变量代换 t = r^α 后分面板Gauss求积"""
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    upper = eps ** alpha
    edges = np.arange(1.0, upper, PANEL_WIDTH)
    edges = np.append(edges, upper)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    t = mid[:, None] + half[:, None] * nodes[None, :]
    r = t ** (1.0 / alpha)
    jac = np.abs(1.0 / alpha) * t ** (1.0 / alpha - 1.0)
    vals = r ** (dim - 3) * np.abs(alpha * t * np.cos(t) - np.sin(t)) * (r ** beta - 1.0) * jac
    return math.sqrt(c) * float(np.sum(half[:, None] * weights[None, :] * vals))


def oscillation_probe(c: float, alpha: float, beta: float, epsilons: Sequence[float], dim: int = 3,
                      tol: float = SLOPE_TOL) -> OscillationReport:
    """
    I(ε) = ∫_{ε<|x|<1} |σ_α w_β| 的发散率拟合

    对 log I 与 log(1/ε) 做最小二乘得到斜率；结论依据最细两点之间的局部斜率
    与容差 tol 的比较（斜率 > tol 视为不可积的证据）。

    Raises:
        PotentialError: 参数越界或 ε 序列不是严格递减
    """
    if not (2 - dim < alpha < 0):
        raise PotentialError(f"oscillation_probe: 需要 {2 - dim} < α < 0")
    if not ((2 - dim) / 2.0 < beta < 0):
        raise PotentialError(f"oscillation_probe: 需要 {(2 - dim) / 2.0} < β < 0")
    if c <= 0:
        raise PotentialError("oscillation_probe: 需要 c > 0")
    eps = [float(e) for e in epsilons]
    if len(eps) < 2 or any(e <= 0 or e >= 1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise PotentialError("oscillation_probe: ε 序列必须在 (0,1) 内严格递减且至少两项")
    sphere = sphere_abs_first_coordinate(dim)
    integrals = [sphere * _radial_integral(c, alpha, beta, e, dim) for e in eps]
    logs = np.log(integrals)
    inv = np.log(1.0 / np.asarray(eps))
    slope = float(np.polyfit(inv, logs, 1)[0])
    tail = float((logs[-1] - logs[-2]) / (inv[-1] - inv[-2]))
    divergent = tail > tol
    logger.info("振荡探测 α=%g β=%g：斜率 %.4f，尾部斜率 %.4f", alpha, beta, slope, tail)
    return OscillationReport(slope, tail, eps, [float(v) for v in integrals], divergent)
