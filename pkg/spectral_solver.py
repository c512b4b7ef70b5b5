#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
谱求解模块 - 二次型的主特征对与加权束 (Q_V, M_w) 的底部值
带位移的逆迭代，内层为预条件CG；CG报告负曲率时在 {x, p} 上做Rayleigh-Ritz
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from mesh import Grid, GridFunction, Mask
from linear_solver import pcg
from quadratic_form import DiscreteForm, FormError, MassMatrix, lumped_mass, qv

logger = logging.getLogger(__name__)

EIG_TOL = 1e-8
EIG_MAXIT = 10_000
# 位移到当前估计的最小距离（相对于 λ 的量级）
SHIFT_FLOOR = 1e-3
# 负曲率次数超过该值且估计持续下降时判定为无下界
MAX_CURVATURE_EVENTS = 60


class EigenError(RuntimeError):
    """特征值迭代失败"""


@dataclass(frozen=True)
class SpectralResult:
    value: float
    vector: GridFunction = field(repr=False)
    residual: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class GapResult:
    """加权束底部值；indefinite 表示二次型在质量非零方向上不定"""

    value: float
    vector: Optional[GridFunction] = field(repr=False)
    residual: float
    converged: bool
    iterations: int
    indefinite: bool = False
    unbounded: bool = False


def reference_eigenvalue(grid: Grid) -> float:
    """包围盒上连续Dirichlet拉普拉斯的第一特征值 π²Σ1/L_i²"""
    return math.pi ** 2 * sum(1.0 / (b - a) ** 2 for a, b in grid.extents)


def smooth_start(form: DiscreteForm) -> np.ndarray:
    """盒上第一正弦模态限制到掩码，作为正的初始向量"""
    grid = form.grid
    values = np.ones(grid.shape)
    for axis, coords in enumerate(grid.coordinates()):
        a, b = grid.extents[axis]
        values = values * np.sin(math.pi * (coords - a) / (b - a))
    return form.restrict(grid.flatten(values))


def _relative_residual(form: DiscreteForm, Ax: np.ndarray, Mx: np.ndarray, lam: float,
                       x: np.ndarray) -> float:
    xnorm = float(np.linalg.norm(x))
    if xnorm == 0.0:
        return math.inf
    return float(np.linalg.norm(Ax - lam * Mx)) / (form.gershgorin_norm() * xnorm)


def _ritz_pair(form: DiscreteForm, mdiag: np.ndarray, x: np.ndarray, p: np.ndarray) -> Optional[np.ndarray]:
    """{x, p} 上的Rayleigh-Ritz，返回最低Ritz向量；子空间质量退化时返回 None"""
    basis = np.stack([x, form.restrict(p)], axis=1)
    a = basis.T @ np.stack([form.apply(basis[:, 0]), form.apply(basis[:, 1])], axis=1)
    m = basis.T @ (mdiag[:, None] * basis)
    a = 0.5 * (a + a.T)
    m = 0.5 * (m + m.T)
    try:
        _, vecs = scipy.linalg.eigh(a, m)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        return None
    return basis @ vecs[:, 0]


def _inverse_iteration(form: DiscreteForm, mdiag: np.ndarray, x0: np.ndarray, tol: float, maxit: int,
                       floor: Optional[float], scale: float, positive: bool):
    """
    带位移逆迭代的公共内核

    Returns:
        (value, x, residual, converged, iterations, curvature_events, unbounded)
    """
    x = form.restrict(np.array(x0, dtype=float))
    mass = float(np.dot(x, mdiag * x))
    if mass <= 0.0:
        raise FormError("初始向量的加权质量为0")
    x /= math.sqrt(mass)
    tau = 0.0
    events = 0
    restarts = 0
    prev = None
    support = form.support
    mpos = mdiag > 0
    lam = math.nan
    res = math.inf
    for it in range(1, maxit + 1):
        Ax = form.apply(x)
        Mx = mdiag * x
        lam = float(np.dot(x, Ax)) / float(np.dot(x, Mx))
        res = _relative_residual(form, Ax, Mx, lam, x)
        if res <= tol:
            if positive and restarts < 3 and float(np.min(x[support])) < -1e-6 * float(np.max(np.abs(x))):
                # 基态在Z矩阵下不变号：用 |x| 重新开始，qv(|x|) ≤ qv(x)
                restarts += 1
                x = np.abs(x)
                x /= math.sqrt(float(np.dot(x, mdiag * x)))
                tau = max(tau, SHIFT_FLOOR * max(scale, abs(lam))) * 4.0
                continue
            return lam, x, res, True, it, events, False
        tau_min = SHIFT_FLOOR * max(scale, abs(lam))
        if positive:
            r = Ax - lam * Mx
            eta = math.sqrt(float(np.sum(np.where(mpos, r * r / np.where(mpos, mdiag, 1.0), 0.0))))
        else:
            eta = 2.0 * abs(lam - prev) if prev is not None else max(abs(lam), scale)
        prev = lam
        sigma = lam - max(tau, tau_min, eta)
        if floor is not None:
            sigma = max(sigma, floor)
        inner = min(1e-2, max(1e-12, 0.1 * res))
        diag = form.diagonal() - sigma * mdiag
        result = pcg(lambda v: form.apply(v) - sigma * (mdiag * v), Mx, diag, tol=inner, support=support)
        if result.negative_curvature:
            events += 1
            p = result.direction
            pMp = float(np.dot(p, mdiag * p))
            pAp = float(np.dot(p, form.apply(p)))
            if pMp <= 1e-14 * float(np.dot(p, p)) * float(np.max(mdiag)) and pAp < 0.0:
                logger.debug("负曲率方向不带质量：加权束无下界")
                return 0.0, x, res, False, it, events, True
            z = _ritz_pair(form, mdiag, x, p)
            if z is None or float(np.dot(z, mdiag * z)) <= 0.0:
                z = p if pMp > 0 else x
            x = form.restrict(z)
            x /= math.sqrt(float(np.dot(x, mdiag * x)))
            tau = max(tau, tau_min) * 4.0
            if events > MAX_CURVATURE_EVENTS and not positive:
                logger.warning("负曲率反复出现 (%d 次)：按无下界处理", events)
                return 0.0, x, res, False, it, events, True
            continue
        y = result.x
        ymass = float(np.dot(y, mdiag * y))
        if not result.converged:
            logger.debug("内层CG未达到容差 %.1e（残差 %.3e）", inner, result.residual)
            tau = max(tau, tau_min) * 2.0
        if ymass <= 0.0 or not np.isfinite(ymass):
            raise EigenError("逆迭代得到零向量")
        x = y / math.sqrt(ymass)
        if float(np.sum(x)) < 0.0:
            x = -x
    return lam, x, res, False, maxit, events, False


def principal_eig(form: DiscreteForm, mass: Optional[MassMatrix] = None, tol: float = EIG_TOL,
                  maxit: int = EIG_MAXIT, x0: Optional[np.ndarray] = None) -> SpectralResult:
    """
    束 (A, M) 的最小特征值与特征向量

    位移取 当前Rayleigh商 - max(残差界, 1e-3·量级)，并不低于 min V - 1（此时位移算子正定）。

    Args:
        form: 二次型
        mass: 质量矩阵，默认集中质量
        tol: 相对残差 ‖Av-λMv‖/(‖A‖‖v‖) 容差

    Returns:
        SpectralResult，向量满足 vᵀMv = 1 且分量和为正

    Raises:
        EigenError: 迭代预算耗尽
    """
    grid = form.grid
    mass = mass if mass is not None else lumped_mass(grid)
    if not mass.grid.same_as(grid):
        raise FormError("质量矩阵与二次型的网格不一致")
    mdiag = np.where(form.support, mass.diag, 0.0)
    if np.any(mdiag[form.support] <= 0):
        raise FormError("质量矩阵必须在二次型掩码上为正")
    start = smooth_start(form) if x0 is None else np.asarray(x0, dtype=float)
    if not np.any(form.restrict(start)):
        start = form.restrict(np.ones(grid.size))
    # 刚度部分半正定：Gershgorin给出 λ ≥ min(d_i/m_i)
    floor = float(np.min(form.potential[form.support] * grid.cellvol / mdiag[form.support])) - 1.0
    lam, x, res, ok, its, events, _ = _inverse_iteration(
        form, mdiag, start, tol, maxit, floor, reference_eigenvalue(grid), positive=True)
    if not ok:
        raise EigenError(f"主特征值在 {its} 次迭代内未收敛（残差 {res:.3e}）")
    logger.debug("主特征值 %.12g：%d 次迭代，残差 %.2e，负曲率 %d 次", lam, its, res, events)
    return SpectralResult(lam, GridFunction(grid, x), res, ok, its)


def null_set_bottom(form: DiscreteForm, mdiag: np.ndarray, tol: float = EIG_TOL,
                    maxit: int = EIG_MAXIT) -> Optional[float]:
    """
    二次型限制到权重零集 Z = {w = 0} 上的主特征值（集中质量）

    束 (A, M_w) 有下界当且仅当 A_ZZ 正定。Z 为空时返回 None。
    """
    zero = form.mask & ~Mask(form.grid, mdiag > 0.0)
    if zero.count == 0:
        return None
    return principal_eig(form.on_mask(zero), tol=tol, maxit=maxit).value


def weighted_gap(form: DiscreteForm, mass: MassMatrix, tol: float = EIG_TOL, maxit: int = EIG_MAXIT,
                 x0: Optional[np.ndarray] = None) -> GapResult:
    """
    μ = inf{ qv(ξ) : ξᵀM_wξ = 1 }

    M_w 可以半正定。二次型不定但束底部有限时返回带符号的值并置 indefinite；
    二次型在权重零集 {w = 0} 上不正定（束无下界）时返回 0 并置 indefinite 与 unbounded。

    Raises:
        FormError: M_w ≡ 0
        EigenError: 迭代预算耗尽
    """
    grid = form.grid
    if not mass.grid.same_as(grid):
        raise FormError("质量矩阵与二次型的网格不一致")
    mdiag = np.where(form.support, mass.diag, 0.0)
    total = float(np.sum(mdiag))
    if total <= 0.0:
        raise FormError("加权质量在二次型掩码上恒为0")
    null_floor = null_set_bottom(form, mdiag, tol=tol, maxit=maxit)
    if null_floor is not None and null_floor <= 0.0:
        logger.warning("加权束无下界：二次型在权重零集上的最小特征值 %.6e ≤ 0", null_floor)
        return GapResult(0.0, None, math.inf, False, 0, indefinite=True, unbounded=True)
    scale = reference_eigenvalue(grid) * grid.cellvol * form.mask.count / total
    start = smooth_start(form) if x0 is None else np.asarray(x0, dtype=float)
    if float(np.dot(start, mdiag * start)) <= 0.0:
        start = form.restrict(np.ones(grid.size))
    lam, x, res, ok, its, events, unbounded = _inverse_iteration(
        form, mdiag, start, tol, maxit, None, scale, positive=False)
    if unbounded:
        logger.warning("加权束无下界：二次型在权重的零集上取负值")
        return GapResult(0.0, None, res, False, its, indefinite=True, unbounded=True)
    if not ok:
        raise EigenError(f"加权谱隙在 {its} 次迭代内未收敛（残差 {res:.3e}）")
    indefinite = lam < 0.0
    logger.debug("加权谱隙 %.12g：%d 次迭代，残差 %.2e", lam, its, res)
    return GapResult(lam, GridFunction(grid, x), res, ok, its, indefinite=indefinite)


def rayleigh(form: DiscreteForm, mass: MassMatrix, xi) -> float:
    """qv(ξ)/(ξᵀMξ)"""
    values = xi.values if isinstance(xi, GridFunction) else np.asarray(xi, dtype=float)
    values = form.restrict(values)
    denom = mass.norm2(values)
    if denom <= 0.0:
        raise FormError("测试函数的加权质量为0")
    return qv(form, values) / denom
