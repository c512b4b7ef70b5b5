#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
线性求解模块 - Jacobi预条件共轭梯度、Dirichlet问题及其L¹估计、离散H⁻¹范数、障碍问题
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from mesh import Grid, GridFunction, Mask, full_mask
from potential_catalog import PotentialField
from quadratic_form import DiscreteForm, FormError, assemble, lumped_mass, qv

logger = logging.getLogger(__name__)

CG_TOL = 1e-10
PSOR_OMEGA = 1.5
PSOR_TOL = 1e-10
PSOR_MAX_SWEEPS = 500_000
ESTIMATE_SLACK = 0.05


class SolverError(RuntimeError):
    """迭代求解未收敛"""

    def __init__(self, message: str, iterations: int = 0, negative_curvature: bool = False):
        super().__init__(message)
        self.iterations = iterations
        self.negative_curvature = negative_curvature


@dataclass
class CGResult:
    """共轭梯度的结果记录"""

    x: np.ndarray = field(repr=False)
    iterations: int
    converged: bool
    negative_curvature: bool = False
    residual: float = 0.0
    direction: Optional[np.ndarray] = field(default=None, repr=False)


def pcg(apply: Callable[[np.ndarray], np.ndarray], b: np.ndarray, diag: np.ndarray,
        tol: float = CG_TOL, maxit: Optional[int] = None, x0: Optional[np.ndarray] = None,
        support: Optional[np.ndarray] = None) -> CGResult:
    """
    Jacobi预条件共轭梯度

    遇到 pᵀAp ≤ 0 时立即停止并返回该方向（负曲率标记），
    调用方据此判断算子不定。

    Args:
        apply: 矩阵向量乘
        b: 右端项
        diag: 对角元（用于预条件，非正的元素按1处理）
        tol: 相对残差容差 ‖r‖ ≤ tol·‖b‖
        maxit: 最大迭代数，默认 10·len(b)
        x0: 初值
        support: 布尔数组，迭代限制在其上

    Returns:
        CGResult
    """
    n = b.size
    maxit = maxit if maxit is not None else max(100, 10 * n)
    if support is not None:
        b = np.where(support, b, 0.0)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, True)
    precond = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    if support is not None:
        precond = np.where(support, precond, 0.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    z = precond * r
    p = z.copy()
    rz = float(np.dot(r, z))
    target = tol * bnorm
    rnorm = float(np.linalg.norm(r))
    for it in range(1, maxit + 1):
        if rnorm <= target:
            return CGResult(x, it - 1, True, residual=rnorm / bnorm)
        q = apply(p)
        curvature = float(np.dot(p, q))
        if curvature <= 0.0:
            logger.debug("CG 第 %d 步检测到负曲率 %.3e", it, curvature)
            return CGResult(x, it, False, negative_curvature=True, residual=rnorm / bnorm, direction=p)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * q
        rnorm = float(np.linalg.norm(r))
        z = precond * r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    converged = rnorm <= target
    return CGResult(x, maxit, converged, residual=rnorm / bnorm)


def _rhs(form: DiscreteForm, rhs) -> np.ndarray:
    if isinstance(rhs, GridFunction):
        if not rhs.grid.same_as(form.grid):
            raise FormError("右端项与二次型的网格不一致")
        return form.restrict(rhs.values)
    arr = np.asarray(rhs, dtype=float)
    if arr.shape != (form.grid.size,):
        raise FormError("右端项长度与网格不一致")
    return form.restrict(arr)


def cg_solve(form: DiscreteForm, rhs, tol: float = CG_TOL, maxit: Optional[int] = None) -> GridFunction:
    """
    求解 A x = b（A 在掩码上对称正定）

    Raises:
        SolverError: 未收敛或检测到负曲率（算子不定或近奇异）
    """
    b = _rhs(form, rhs)
    result = pcg(form.apply, b, form.diagonal(), tol=tol, maxit=maxit, support=form.support)
    if result.negative_curvature:
        raise SolverError(f"CG 在第 {result.iterations} 步遇到负曲率：算子不定",
                          result.iterations, negative_curvature=True)
    if not result.converged:
        raise SolverError(f"CG 在 {result.iterations} 步内未收敛（相对残差 {result.residual:.3e}）",
                          result.iterations)
    logger.debug("CG 收敛：%d 步，相对残差 %.3e", result.iterations, result.residual)
    return GridFunction(form.grid, result.x)


@dataclass(frozen=True)
class EstimateReport:
    """‖Wu‖_{L¹(K)} ≤ 2‖W‖^{1/2}_{L¹(K)}‖f‖_{H⁻¹} 的检查结果"""

    lhs: float
    rhs: float
    holds: bool
    slack: float = ESTIMATE_SLACK


def _weights(grid: Grid, W) -> np.ndarray:
    if isinstance(W, PotentialField):
        if np.any(W.vminus > 0):
            raise FormError("Dirichlet问题要求 W ≥ 0")
        return W.vplus
    values = W.values if isinstance(W, GridFunction) else np.asarray(W, dtype=float)
    if values.shape != (grid.size,):
        raise FormError("W 的长度与网格不一致")
    if np.any(values < 0):
        raise FormError("Dirichlet问题要求 W ≥ 0")
    return values


def hminus1_norm(grid: Grid, f, tol: float = CG_TOL, mask: Optional[Mask] = None) -> float:
    """离散对偶范数 (fᵀ M A₀⁻¹ M f)^{1/2}"""
    values = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    if not np.all(np.isfinite(values)):
        raise FormError("f 含有非有限值")
    laplacian = assemble(grid, mask=mask)
    mf = lumped_mass(grid).apply(values)
    try:
        y = cg_solve(laplacian, mf, tol=tol)
    except SolverError as e:
        raise RuntimeError(f"H⁻¹范数的内部Poisson求解失败: {e}")
    return float(np.sqrt(max(np.dot(laplacian.restrict(mf), y.values), 0.0)))


def dirichlet_solve(grid: Grid, W, f: GridFunction, K: Mask, tol: float = CG_TOL):
    """
    求解 (A₀ + diag(W))u = M f 并检查L¹估计

    Args:
        grid: 网格
        W: 非负势（PotentialField、GridFunction 或数组）
        f: 右端
        K: 估计所在的紧集

    Returns:
        (u, EstimateReport)
    """
    weights = _weights(grid, W)
    form = DiscreteForm(grid, full_mask(grid), weights, "dirichlet")
    mf = lumped_mass(grid).apply(f.values)
    try:
        u = cg_solve(form, mf, tol=tol)
    except SolverError as e:
        raise RuntimeError(f"W ≥ 0 时的Dirichlet求解不应失败: {e}")
    on_k = K.bits
    lhs = float(np.sum(weights[on_k] * np.abs(u.values[on_k]))) * grid.cellvol
    w_l1 = float(np.sum(weights[on_k])) * grid.cellvol
    rhs = 2.0 * np.sqrt(w_l1) * hminus1_norm(grid, f, tol=tol)
    report = EstimateReport(lhs=lhs, rhs=float(rhs), holds=lhs <= rhs * (1.0 + ESTIMATE_SLACK))
    logger.debug("L¹估计: lhs=%.6e rhs=%.6e", lhs, rhs)
    return u, report


# ---------------------------------------------------------------------------
# 障碍问题
# ---------------------------------------------------------------------------

@dataclass
class ObstacleResult:
    """投影SOR的结果"""

    solution: GridFunction
    sweeps: int
    complementarity: float
    energies: List[float] = field(default_factory=list)


def obstacle_lower(K: Mask, level: float = 1.0) -> np.ndarray:
    """障碍下界：K 上为 level，K 外为 -∞"""
    return np.where(K.bits, level, -np.inf)


def _colors(grid: Grid) -> List[np.ndarray]:
    parity = sum(np.indices(grid.shape)[axis] for axis in range(grid.dim)) % 2
    flat = grid.flatten(parity)
    return [flat < 0.5, flat > 0.5]


def complementarity_residual(form: DiscreteForm, x: np.ndarray, lower: np.ndarray) -> float:
    """以节点更新量 |(Aξ)_i/a_ii| 计的互补残差"""
    diag = form.diagonal()
    support = form.support
    g = form.apply(x)
    scaled = np.where(support, g / np.where(support, diag, 1.0), 0.0)
    finite = np.isfinite(lower)
    bound = np.where(finite, lower, 0.0)
    active = finite & (x <= bound + 1e-14 * np.maximum(np.abs(bound), 1.0))
    # 活跃集上只要求 (Aξ)_i ≥ 0，非活跃处要求 = 0
    violation = np.where(active, np.maximum(-scaled, 0.0), np.abs(scaled))
    return float(np.max(violation[support])) if np.any(support) else 0.0


def psor(form: DiscreteForm, lower: np.ndarray, omega: float = PSOR_OMEGA, tol: float = PSOR_TOL,
         max_sweeps: int = PSOR_MAX_SWEEPS, x0: Optional[np.ndarray] = None,
         track_energy: bool = False) -> ObstacleResult:
    """
    红黑投影SOR：min ξᵀAξ，约束 ξ ≥ lower

    同色节点在 2N+1 点模板下互不耦合，可整体更新；
    最大节点更新量 < tol·scale 时停止。

    Raises:
        SolverError: 超出迭代上限
    """
    grid = form.grid
    support = form.support
    lower = np.where(support, lower, -np.inf)
    if not np.any(np.isfinite(lower)):
        raise FormError("障碍问题的约束集为空")
    diag = form.diagonal()
    if np.any(diag[support] <= 0):
        raise FormError("障碍问题要求对角元为正")
    finite = lower[np.isfinite(lower)]
    scale = max(float(np.max(np.abs(finite))), 1.0)
    x = np.where(np.isfinite(lower), lower, 0.0) if x0 is None else np.maximum(np.array(x0, dtype=float), lower)
    x = np.where(support, x, 0.0)
    colors = [c & support for c in _colors(grid)]
    safe_diag = np.where(support, diag, 1.0)
    energies = [qv(form, x)] if track_energy else []
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for color in colors:
            g = form.apply(x)
            trial = x - omega * g / safe_diag
            new = np.maximum(trial, lower)
            delta = np.abs(new[color] - x[color])
            if delta.size:
                biggest = max(biggest, float(np.max(delta)))
            x[color] = new[color]
        if track_energy:
            energies.append(qv(form, x))
        if biggest < tol * scale:
            comp = complementarity_residual(form, x, lower)
            logger.debug("PSOR 收敛：%d 次扫描，互补残差 %.3e", sweep, comp)
            return ObstacleResult(GridFunction(grid, x), sweep, comp, energies)
    raise SolverError(f"PSOR 在 {max_sweeps} 次扫描内未收敛", max_sweeps)


def obstacle_solve(form: DiscreteForm, lower: Union[np.ndarray, Mask], omega: float = PSOR_OMEGA,
                   tol: float = PSOR_TOL, max_sweeps: int = PSOR_MAX_SWEEPS) -> GridFunction:
    """
    障碍问题的唯一极小元

    Args:
        form: 正定二次型
        lower: 下界数组（K 外为 -∞）或紧集掩码（此时 K 上下界为1）

    Returns:
        极小元 ξ*
    """
    if isinstance(lower, Mask):
        if lower.count == 0:
            raise FormError("紧集 K 为空")
        lower = obstacle_lower(lower)
    return psor(form, np.asarray(lower, dtype=float), omega=omega, tol=tol, max_sweeps=max_sweeps).solution
