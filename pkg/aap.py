#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
AAP构造模块 - 正上解的构造（穷竭 + 负部截断 + 主特征对）、AAP下界验证、
基态变换恒等式以及Picone改进权重
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from mesh import Grid, GridFunction, Mask, box_mask, centered_box, exhaustion
from potential_catalog import PotentialField, PotentialSpec, eval_catalog
from quadratic_form import DiscreteForm, MassMatrix, assemble, face_differences, qv, weighted_mass
from spectral_solver import EIG_TOL, EigenError, principal_eig, reference_eigenvalue, weighted_gap
from potential_probes import bump_battery, spike_battery

logger = logging.getLogger(__name__)

DEFAULT_TRUNCATIONS = (1.0, 10.0, 100.0)
EARLY_STOP = 1e-4
RESIDUAL_TOL = 1e-6
GAP_TOL = 0.05


class SupersolutionError(RuntimeError):
    """正上解构造失败（出现负的截断特征值或特征值迭代失败）"""


class WeightError(ValueError):
    """改进权重或验证输入不合法"""


@dataclass(frozen=True)
class ScheduleEntry:
    truncation: float
    level: int
    eigenvalue: float
    converged: bool
    change: Optional[float] = None


@dataclass(frozen=True)
class Supersolution:
    """正上解 u 及其离散Riesz测度 μ = A_V u（按单元体积缩放）"""

    u: GridFunction = field(repr=False)
    residual: GridFunction = field(repr=False)
    mask: Mask = field(repr=False)
    ball: Mask = field(repr=False)
    ball_box: Tuple[Tuple[float, float], ...] = ()
    schedule: List[ScheduleEntry] = field(default_factory=list)
    residual_tol: float = 0.0

    @property
    def residual_min(self) -> float:
        return float(np.min(self.residual.values[self.mask.bits]))

    @property
    def ball_min(self) -> float:
        return float(np.min(self.u.values[self.ball.bits]))


def _field(potential, grid: Grid) -> Optional[PotentialField]:
    if potential is None:
        return None
    if isinstance(potential, PotentialSpec):
        return eval_catalog(potential, grid)
    return potential


def normalization_ball(grid: Grid, omega1: Mask, m: int) -> Tuple[Mask, Tuple]:
    """Ω₁ 的中心半盒作为归一化区域 B₀"""
    box = centered_box(grid, 0.5 / m)
    ball = box_mask(grid, box) & omega1
    if ball.count == 0:
        # Ω₁ 太小时退化为 Ω₁ 本身
        ball = omega1
    return ball, box


def construct_supersolution(potential, grid: Grid, m_levels: int = 2,
                            truncations: Sequence[float] = DEFAULT_TRUNCATIONS,
                            domain: Optional[Mask] = None, tol: float = EIG_TOL) -> Supersolution:
    """
    沿穷竭序列与负部截断构造正上解

    对每个 (n, m)：在 Ω_m 上装配势 V⁺ - min(V⁻, n)，求主特征对，
    将特征向量归一化为 B₀ 上最小值为1；同一 m 下 Ω₁ 上的相对变化小于 1e-4 时提前停止。
    最后总是在整个区域上用未截断的势求解一次，残差 μ = A_V u。

    Args:
        potential: PotentialSpec 或 PotentialField（None 表示 V ≡ 0）
        grid: 网格
        m_levels: 穷竭层数 ≥ 2
        truncations: 递增的截断序列
        domain: 外区域掩码（例如球）

    Raises:
        SupersolutionError: 某个 λ_{n,m} 低于 -容差，或全部求解失败
    """
    if m_levels < 2:
        raise WeightError("m_levels 必须 ≥ 2")
    if any(b <= a for a, b in zip(truncations, truncations[1:])):
        raise WeightError("截断序列必须严格递增")
    fld = _field(potential, grid)
    masks = exhaustion(grid, m_levels, within=domain)
    ball, ball_box = normalization_ball(grid, masks[0], m_levels)
    floor = -1e-8 * reference_eigenvalue(grid)
    plan = [(float(n), k) for k in range(m_levels) for n in truncations] + [(math.inf, m_levels - 1)]

    schedule: List[ScheduleEntry] = []
    best = None
    previous = None
    stopped_level = None
    for n, k in plan:
        if stopped_level == k and math.isfinite(n):
            continue
        form = assemble(grid, fld, masks[k], truncation=None if math.isinf(n) else n)
        try:
            eig = principal_eig(form, tol=tol)
        except EigenError as e:
            logger.warning("λ_{%s,%d} 求解失败，保留上一个收敛的层：%s", n, k + 1, e)
            schedule.append(ScheduleEntry(n, k + 1, math.nan, False))
            break
        if eig.value < floor:
            raise SupersolutionError(
                f"λ_(n={n}, m={k + 1}) = {eig.value:.6e} < 0：与非负性矛盾（势可能是超临界的）")
        u = np.maximum(eig.vector.values, 0.0)
        u = u / float(np.min(u[ball.bits]))
        change = None
        if previous is not None and previous[1] == k:
            inner = masks[0].bits
            change = float(np.max(np.abs(u[inner] - previous[0][inner])) / np.max(np.abs(u[inner])))
        schedule.append(ScheduleEntry(n, k + 1, eig.value, True, change))
        logger.debug("λ_{n=%s,m=%d} = %.8g", n, k + 1, eig.value)
        previous = (u, k)
        best = (u, form)
        if change is not None and change < EARLY_STOP:
            stopped_level = k
    if best is None:
        raise SupersolutionError("所有 (n, m) 的特征值求解都失败")
    u, form = best
    if schedule[-1].converged and not math.isinf(schedule[-1].truncation):
        logger.warning("未完成未截断的整体求解：上解只对截断势成立")
    residual = form.apply(u)
    scale = form.gershgorin_norm() * float(np.max(u))
    sup = Supersolution(GridFunction(grid, u), GridFunction(grid, residual), form.mask, ball,
                        tuple(ball_box), schedule, RESIDUAL_TOL * scale)
    if float(np.min(u[form.mask.bits])) <= 0.0:
        raise SupersolutionError("构造出的 u 在掩码上不是严格正的")
    logger.info("正上解：%d 个 (n,m) 层，残差最小值 %.3e", len(schedule), sup.residual_min)
    return sup


@dataclass(frozen=True)
class AAPReport:
    gap: float
    gap_ok: bool
    battery_margin: float
    battery_ok: bool

    @property
    def passed(self) -> bool:
        return self.gap_ok and self.battery_ok


def verify_aap(form: DiscreteForm, sup: Supersolution, h: Optional[Union[GridFunction, np.ndarray]] = None,
               battery: Optional[List[GridFunction]] = None, tol: float = GAP_TOL, seed: int = 0) -> AAPReport:
    """
    AAP下界：qv(ξ) ≥ Σ (h/u) ξ²，其中 h ≤ μ（与残差同为按单元体积缩放的量）

    Args:
        form: 二次型
        sup: 正上解
        h: 默认取残差的非负部分

    Raises:
        WeightError: h 在某处超过残差，或 u 不为正
    """
    grid = form.grid
    residual = sup.residual.values
    if h is None:
        hv = np.maximum(residual, 0.0)
    else:
        hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
    support = form.support
    if np.any(hv < 0):
        raise WeightError("h 必须非负")
    if np.any(hv[support] > residual[support] + sup.residual_tol):
        raise WeightError("h 必须处处不超过残差 μ")
    u = sup.u.values
    if np.any(u[support] <= 0):
        raise WeightError("上解在掩码上必须为正")
    w = np.where(support, hv / np.where(support, u, 1.0), 0.0)
    if not np.any(w > 0):
        return AAPReport(math.inf, True, 0.0, True)
    mass = MassMatrix(grid, w)
    gap = weighted_gap(form, mass).value
    if battery is None:
        K = Mask(grid, w > 0)
        battery = spike_battery(grid, K) + bump_battery(grid, K, form.mask, seed=seed)
    margin = math.inf
    ok = True
    for xi in battery:
        x = form.restrict(xi.values)
        lhs = qv(form, x)
        rhs = mass.norm2(x)
        slack = 1e-8 * (abs(lhs) + rhs)
        margin = min(margin, lhs - rhs)
        ok = ok and lhs >= rhs - slack
    return AAPReport(gap, gap >= 1.0 - tol, margin, ok)


def _ratio_faces(grid: Grid, xi: np.ndarray, u: np.ndarray, support: np.ndarray) -> List[np.ndarray]:
    """面上的 ξ/u：取两端中属于掩码的节点的平均"""
    ratio = np.where(support, xi / np.where(support, u, 1.0), 0.0)
    padded_r = np.pad(grid.unflatten(ratio), 1)
    padded_s = np.pad(grid.unflatten(support.astype(float)), 1)
    out = []
    for axis in range(grid.dim):
        index = [slice(1, -1)] * grid.dim
        index[axis] = slice(None)
        r = padded_r[tuple(index)]
        s = padded_s[tuple(index)]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        count = s[tuple(lo)] + s[tuple(hi)]
        total = r[tuple(lo)] + r[tuple(hi)]
        out.append(np.where(count > 0, total / np.maximum(count, 1.0), 0.0))
    return out


def ground_state_transform(form: DiscreteForm, u: GridFunction, f, xi) -> float:
    """
    基态变换恒等式的离散残差

    qv(ξ) - Σ(f/u)ξ² - Σ_faces |D_hξ - (ξ/u)‾·D_hu|²·cellvol，f = A u（按单元体积缩放）。
    光滑数据下残差以 O(h²) 趋于0。

    Raises:
        WeightError: u 在掩码上不为正
    """
    grid = form.grid
    support = form.support
    uv = form.restrict(u.values)
    if np.any(uv[support] <= 0):
        raise WeightError("基态变换要求 u 在掩码上为正")
    fv = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    x = form.restrict(xi.values if isinstance(xi, GridFunction) else np.asarray(xi, dtype=float))
    weight_term = float(np.sum(np.where(support, fv / np.where(support, uv, 1.0), 0.0) * x * x))
    dx = face_differences(grid, x)
    du = face_differences(grid, uv)
    ratios = _ratio_faces(grid, x, uv, support)
    gradient = sum(float(np.sum((a - r * b) ** 2)) for a, r, b in zip(dx, ratios, du)) * grid.cellvol
    return qv(form, x) - weight_term - gradient


def _closure(grid: Grid, u) -> np.ndarray:
    """网格函数零延拓到闭网格；已是闭网格形状的数组原样返回"""
    if isinstance(u, GridFunction):
        if not u.grid.same_as(grid):
            raise WeightError("网格函数与网格不一致")
        return np.pad(grid.unflatten(u.values), 1)
    arr = np.asarray(u, dtype=float)
    closure_shape = tuple(k + 2 for k in grid.n)
    if arr.shape == closure_shape:
        return arr
    if arr.size == grid.size:
        return np.pad(grid.unflatten(arr.ravel()), 1)
    raise WeightError(f"数组形状 {arr.shape} 既不是内部也不是闭网格形状")


def picone_improve(u1, u2, grid: Optional[Grid] = None) -> GridFunction:
    """
    Picone改进权重 w = ¼|∇u₁/u₁ - ∇u₂/u₂|²

    面上取 D_hu/ū（ū 为面平均），节点上对相邻两面求平均后平方求和；
    两端都为0的面（零边界）跳过，节点只用另一侧的面。

    Args:
        u1, u2: 正的网格函数，或包含边界值的闭网格数组（此时需给出 grid）

    Raises:
        WeightError: 内部节点上出现非正值
    """
    if grid is None:
        if isinstance(u1, GridFunction):
            grid = u1.grid
        elif isinstance(u2, GridFunction):
            grid = u2.grid
        else:
            raise WeightError("闭网格数组输入需要给出 grid")
    c1, c2 = _closure(grid, u1), _closure(grid, u2)
    closure_shape = tuple(k + 2 for k in grid.n)
    zero_boundary = any(isinstance(u, GridFunction) or np.shape(u) != closure_shape for u in (u1, u2))
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    if np.any(c1[inner] <= 0) or np.any(c2[inner] <= 0):
        raise WeightError("Picone权重要求 u₁、u₂ 在内部节点上为正")
    w = np.zeros(grid.shape)
    for axis, step in enumerate(grid.h):
        index = [slice(1, -1)] * grid.dim
        index[axis] = slice(None)
        a, b = c1[tuple(index)], c2[tuple(index)]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        mean_a = 0.5 * (a[lo] + a[hi])
        mean_b = 0.5 * (b[lo] + b[hi])
        valid = (mean_a > 0) & (mean_b > 0)
        if zero_boundary:
            first = [slice(None)] * grid.dim
            last = [slice(None)] * grid.dim
            first[axis] = 0
            last[axis] = -1
            valid[tuple(first)] = False
            valid[tuple(last)] = False
        g = np.where(valid, (a[hi] - a[lo]) / step / np.where(valid, mean_a, 1.0)
                      - (b[hi] - b[lo]) / step / np.where(valid, mean_b, 1.0), 0.0)
        # 节点两侧的面：沿该轴的前 n 个面与后 n 个面
        left = [slice(None)] * grid.dim
        right = [slice(None)] * grid.dim
        left[axis] = slice(None, -1)
        right[axis] = slice(1, None)
        gl, gr = g[tuple(left)], g[tuple(right)]
        vl, vr = valid[tuple(left)].astype(float), valid[tuple(right)].astype(float)
        count = vl + vr
        mean = np.where(count > 0, (gl * vl + gr * vr) / np.maximum(count, 1.0), 0.0)
        w += mean ** 2
    return GridFunction(grid, grid.flatten(0.25 * w))


@dataclass(frozen=True)
class ImprovementReport:
    holds: bool
    gap: float


def improvement_check(form: DiscreteForm, w: GridFunction, tol: float = GAP_TOL) -> ImprovementReport:
    """
    检查 Q_V ⪰ w：weighted_gap(form, M_w) ≥ 1 - tol

    Raises:
        WeightError: w ≡ 0（两个上解线性相关时的平凡情形）
    """
    if np.any(w.values < 0):
        raise WeightError("改进权重必须非负")
    if not np.any(form.restrict(w.values) > 0):
        raise WeightError("改进权重恒为0：u₁、u₂ 线性相关，检查没有意义")
    gap = weighted_gap(form, weighted_mass(form.grid, w)).value
    logger.info("改进检查：谱隙 %.6f", gap)
    return ImprovementReport(gap >= 1.0 - tol, gap)


def combine_supersolutions(u1: GridFunction, u2: GridFunction) -> GridFunction:
    """两个正上解的几何平均 Φ = √(u₁u₂)"""
    if not u1.grid.same_as(u2.grid):
        raise WeightError("两个上解的网格不一致")
    if np.any(u1.values < 0) or np.any(u2.values < 0):
        raise WeightError("几何平均要求非负输入")
    return GridFunction(u1.grid, np.sqrt(u1.values * u2.values))


def supersolution_metadata(sup: Supersolution) -> dict:
    """导出上解时的附属元数据"""
    return {
        "normalization_ball": [list(b) for b in sup.ball_box],
        "ball_min": sup.ball_min,
        "residual_min": sup.residual_min,
        "residual_tol": sup.residual_tol,
        "schedule": [
            {"truncation": None if math.isinf(e.truncation) else e.truncation, "level": e.level,
             "eigenvalue": None if math.isnan(e.eigenvalue) else e.eigenvalue,
             "converged": e.converged, "change": e.change}
            for e in sup.schedule
        ],
    }


def export_supersolution(sup: Supersolution, path):
    """写出网格函数文本与 <path>.meta.json"""
    from export_manager import ExportManager
    return ExportManager().export_supersolution(sup.u, supersolution_metadata(sup), path)
