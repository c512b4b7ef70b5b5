#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
势函数目录 - 构造并在网格上取样各类奇异势
含奇异单元的自适应求积、由正解反构势、散度型势以及Orlicz型超临界势
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from mesh import Grid, GridFunction, Mask, GridError, full_mask, read_grid_function

logger = logging.getLogger(__name__)

# 奇异单元自适应细分的默认参数
QUAD_REL_TOL = 1e-6
QUAD_MAX_DEPTH = 12

VARIANTS = (
    "constant", "hardy", "multipolar", "dense_pole_series", "sigma_alpha",
    "divergence_form", "from_ground", "orlicz", "bump_1d", "bubble", "sum",
)


class PotentialError(ValueError):
    """势函数参数不合法或无法取样"""


def hardy_constant(dim: int) -> float:
    """H_N = ((N-2)/2)^2"""
    return ((dim - 2) / 2.0) ** 2


def thread_count() -> int:
    """内部并行度，受 SPECTRAGAP_THREADS 限制"""
    value = os.environ.get("SPECTRAGAP_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("忽略无效的 SPECTRAGAP_THREADS=%r", value)
    return os.cpu_count() or 1


@dataclass(frozen=True)
class PotentialSpec:
    """势函数描述：variant 判别键加上该变体的参数"""

    variant: str
    params: Dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: Dict) -> "PotentialSpec":
        if not isinstance(config, dict) or "variant" not in config:
            raise PotentialError("potential: 缺少 'variant' 判别键")
        variant = config["variant"]
        if variant not in VARIANTS:
            raise PotentialError(f"potential.variant: 未知变体 '{variant}'")
        params = {k: v for k, v in config.items() if k != "variant"}
        if variant == "sum":
            terms = params.get("terms")
            if not isinstance(terms, list) or not terms:
                raise PotentialError("potential.terms: sum 变体需要非空的 terms 列表")
            params["terms"] = [cls.from_config(t) for t in terms]
        return cls(variant, params)

    def get(self, key, default=None):
        return self.params.get(key, default)

    def require(self, key):
        if key not in self.params:
            raise PotentialError(f"potential.{key}: '{self.variant}' 变体缺少该参数")
        return self.params[key]


@dataclass(frozen=True)
class PotentialField:
    """网格上的势：V⁺ 与 V⁻ 的单元值（非负、支集不交）"""

    grid: Grid
    vplus: np.ndarray = field(repr=False)
    vminus: np.ndarray = field(repr=False)
    singular_cells: FrozenSet[int] = frozenset()
    valid_mask: Optional[Mask] = None
    tail_bound: float = 0.0
    expect_nonnegative: bool = False
    provenance: str = ""

    def __post_init__(self):
        for name in ("vplus", "vminus"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.grid.size,):
                raise PotentialError(f"{name} 长度与网格不一致")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise PotentialError(f"{name} 必须是有限非负值")
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any((self.vplus > 0) & (self.vminus > 0)):
            raise PotentialError("V⁺ 与 V⁻ 的支集必须不交")

    @property
    def values(self) -> np.ndarray:
        return self.vplus - self.vminus

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray, **kwargs) -> "PotentialField":
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise PotentialError("势函数取样出现非有限值")
        return cls(grid, np.maximum(values, 0.0), np.maximum(-values, 0.0), **kwargs)

    def assembly_mask(self) -> Mask:
        return self.valid_mask if self.valid_mask is not None else full_mask(self.grid)


# ---------------------------------------------------------------------------
# 奇异单元求积
# ---------------------------------------------------------------------------

def cell_average(func: Callable[..., np.ndarray], center: Sequence[float], h: Sequence[float],
                 rel_tol: float = QUAD_REL_TOL, max_depth: int = QUAD_MAX_DEPTH) -> float:
    """
    闭单元 [x-h/2, x+h/2] 上的平均值，二进自适应细分

    每层把活跃子单元一分为 2^N，比较父单元中点值与子单元中点和；
    误差低于 rel_tol·|累计估计| 时接受。根单元总是细分一次，
    因此极点恰在节点上时不会在极点处取值。最深一层仍为非有限的
    样本（零测度点）按0计。

    Args:
        func: 向量化函数 func(x0, x1, ...)
        center: 单元中心
        h: 各轴步长

    Returns:
        单元平均值
    """
    center = np.asarray(center, dtype=float)
    dim = center.size
    half = np.asarray(h, dtype=float) / 2.0
    vol = float(np.prod(2.0 * half))
    offsets = np.array(np.meshgrid(*[[-0.5, 0.5]] * dim, indexing="ij")).reshape(dim, -1).T

    centers = center[None, :]
    halves = half.copy()
    coarse = np.array([np.nan])
    total = 0.0
    estimate = None
    for depth in range(1, max_depth + 1):
        child_half = halves / 2.0
        child_centers = (centers[:, None, :] + offsets[None, :, :] * halves[None, None, :]).reshape(-1, dim)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            values = np.asarray(func(*child_centers.T), dtype=float)
        values = np.broadcast_to(values, (child_centers.shape[0],)).copy()
        child_vol = vol / (2 ** (dim * depth))
        finite = np.isfinite(values)
        if depth == max_depth:
            values[~finite] = 0.0
            total += float(np.sum(values)) * child_vol
            break
        child_int = np.where(finite, values, 0.0) * child_vol
        fine = child_int.reshape(-1, 2 ** dim).sum(axis=1)
        bad = ~finite.reshape(-1, 2 ** dim).all(axis=1)
        if estimate is None:
            estimate = abs(float(np.sum(fine))) or 1.0
        tol = rel_tol * max(estimate, abs(total))
        accept = (~bad) & np.isfinite(coarse) & (np.abs(fine - coarse) <= tol)
        total += float(np.sum(fine[accept]))
        keep = ~accept
        if not np.any(keep):
            break
        # 被细分的父单元：其子单元成为下一层的活跃单元
        keep_children = np.repeat(keep, 2 ** dim)
        centers = child_centers[keep_children]
        coarse = child_int[keep_children]
        coarse = np.where(finite[keep_children], coarse, np.nan)
        halves = child_half
    return total / vol


def _singular_cells(grid: Grid, poles: Sequence[Sequence[float]]) -> List[int]:
    """极点落在闭单元内的节点编号"""
    if not poles:
        return []
    pts = grid.points()
    h = np.asarray(grid.h)
    cells = set()
    for p in poles:
        p = np.asarray(p, dtype=float)
        inside = np.all(np.abs(pts - p[None, :]) <= h[None, :] / 2.0 * (1.0 + 1e-12), axis=1)
        cells.update(int(i) for i in np.nonzero(inside)[0])
    return sorted(cells)


def _in_open_box(grid: Grid, p: Sequence[float]) -> bool:
    """极点是否严格落在开区域内（与网格步长无关）"""
    for axis, x in enumerate(p):
        a, b = grid.extents[axis]
        tol = 1e-12 * max(b - a, 1.0)
        if x <= a + tol or x >= b - tol:
            return False
    return True


def _check_integrable(grid: Grid, poles, label: str):
    if grid.dim >= 3:
        return
    for p in poles:
        if len(p) != grid.dim:
            raise PotentialError(f"{label}: 极点维数 {len(p)} 与网格维数 {grid.dim} 不符")
        if _in_open_box(grid, p):
            raise PotentialError(
                f"{label}: {grid.dim} 维中 |x|^-2 奇性不可积，极点 {tuple(p)} 落在区域内部（只允许在边界上或区域外）")


def _sample_with_poles(grid: Grid, func: Callable[..., np.ndarray], poles,
                       rel_tol: float = QUAD_REL_TOL, max_depth: int = QUAD_MAX_DEPTH
                       ) -> Tuple[np.ndarray, FrozenSet[int]]:
    """中点取样，含极点的单元改用自适应单元平均"""
    cells = _singular_cells(grid, poles)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        values = np.array(np.broadcast_to(func(*grid.coordinates()), grid.shape), dtype=float)
    values = grid.flatten(values)
    if cells:
        pts = grid.points()
        h = grid.h

        def average(index):
            return cell_average(func, pts[index], h, rel_tol=rel_tol, max_depth=max_depth)

        with ThreadPoolExecutor(max_workers=min(thread_count(), len(cells))) as pool:
            averages = list(pool.map(average, cells))
        for index, value in zip(cells, averages):
            values[index] = value
        logger.debug("奇异单元 %d 个已用自适应求积", len(cells))
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise PotentialError(f"势函数在 {int(bad.sum())} 个节点上非有限（极点未被单元覆盖）")
    return values, frozenset(cells)


def _radius2(coords, center):
    return sum((x - c) ** 2 for x, c in zip(coords, center))


def _center(spec: PotentialSpec, grid: Grid, key: str = "center") -> Tuple[float, ...]:
    center = spec.get(key)
    if center is None:
        return tuple([0.0] * grid.dim)
    center = tuple(float(v) for v in np.atleast_1d(center))
    if len(center) != grid.dim:
        raise PotentialError(f"potential.{key}: 维数 {len(center)} 与网格维数 {grid.dim} 不符")
    return center


# ---------------------------------------------------------------------------
# 目录中的各个变体
# ---------------------------------------------------------------------------

def _inverse_square_sum(centers, weights):
    def func(*coords):
        total = 0.0
        for c, a in zip(centers, weights):
            total = total - a / _radius2(coords, c)
        return total
    return func


def _eval_hardy(spec, grid):
    c = float(spec.require("c"))
    if c <= 0:
        raise PotentialError("potential.c: hardy 势要求 c > 0")
    center = _center(spec, grid)
    _check_integrable(grid, [center], "hardy")
    values, cells = _sample_with_poles(grid, _inverse_square_sum([center], [c]), [center])
    return values, cells, 0.0


def _eval_multipolar(spec, grid):
    poles = spec.require("poles")
    if not isinstance(poles, list) or not poles:
        raise PotentialError("potential.poles: 需要非空的 (center, a) 列表")
    centers, weights = [], []
    for k, pole in enumerate(poles):
        try:
            center = tuple(float(v) for v in np.atleast_1d(pole["center"]))
            weight = float(pole["a"])
        except (KeyError, TypeError, ValueError):
            raise PotentialError(f"potential.poles[{k}]: 需要 center 与 a 字段")
        if len(center) != grid.dim:
            raise PotentialError(f"potential.poles[{k}].center: 维数不符")
        centers.append(center)
        weights.append(weight)
    _check_integrable(grid, centers, "multipolar")
    values, cells = _sample_with_poles(grid, _inverse_square_sum(centers, weights), centers)
    return values, cells, 0.0


def halton_points(count: int, box) -> np.ndarray:
    """盒内的Halton稠密点列（第 i 个点用 i=1,2,... 的根式反演）"""
    primes = (2, 3, 5)
    dim = len(box)
    pts = np.zeros((count, dim))
    for axis in range(dim):
        base = primes[axis]
        for i in range(count):
            k, f, r = i + 1, 1.0, 0.0
            while k > 0:
                f /= base
                r += f * (k % base)
                k //= base
            a, b = box[axis]
            pts[i, axis] = a + (b - a) * r
    return pts


def _eval_dense_poles(spec, grid):
    m = int(spec.require("truncation"))
    if m < 1:
        raise PotentialError("potential.truncation: 截断项数必须 ≥ 1")
    bound = hardy_constant(grid.dim)
    hfloor = 0.5 * grid.hmin
    pts = grid.points()
    if spec.get("generator"):
        if spec.get("generator") != "halton":
            raise PotentialError(f"potential.generator: 未知生成器 '{spec.get('generator')}'")
        total = float(spec.require("total"))
        if total < 0 or total > bound * (1 + 1e-12):
            raise PotentialError(f"potential.total: 需要 0 ≤ Σaᵢ ≤ H_N = {bound}")
        centers = [tuple(p) for p in halton_points(m, grid.extents)]
        weights = [total * 2.0 ** -(i + 1) for i in range(m)]
        # 被略去的极点可以任意接近节点：距离按半个单元截断
        tail = total * 2.0 ** -m / hfloor ** 2
    else:
        centers = [tuple(float(v) for v in np.atleast_1d(c)) for c in spec.require("centers")]
        weights = [float(a) for a in spec.require("weights")]
        if len(centers) != len(weights):
            raise PotentialError("potential.centers/weights: 长度不一致")
        if any(a < 0 for a in weights):
            raise PotentialError("potential.weights: 稠密极点权重必须非负")
        if sum(weights) > bound * (1 + 1e-12):
            raise PotentialError(f"potential.weights: 需要 Σaᵢ ≤ H_N = {bound}")
        if m > len(centers):
            raise PotentialError("potential.truncation: 超过给定的极点个数")
        tail = 0.0
        for c, a in zip(centers[m:], weights[m:]):
            r2 = np.maximum(np.sum((pts - np.asarray(c)[None, :]) ** 2, axis=1), hfloor ** 2)
            tail += a * float(np.max(1.0 / r2))
        centers, weights = centers[:m], weights[:m]
    _check_integrable(grid, centers, "dense_pole_series")
    values, cells = _sample_with_poles(grid, _inverse_square_sum(centers, weights), centers)
    logger.info("稠密极点级数截断于 %d 项，尾项界 %.3e", m, tail)
    return values, cells, tail


def sigma_alpha_function(c: float, alpha: float, center) -> Callable[..., np.ndarray]:
    """σ_α(x) = √c x₁ (α|x|^{α-3} cos|x|^α - sin(|x|^α)|x|^{-3})"""
    root = math.sqrt(c)

    def func(*coords):
        r = np.sqrt(_radius2(coords, center))
        x1 = coords[0] - center[0]
        ra = r ** alpha
        return root * x1 * (alpha * r ** (alpha - 3.0) * np.cos(ra) - np.sin(ra) * r ** -3.0)
    return func


def _eval_sigma_alpha(spec, grid):
    c = float(spec.require("c"))
    alpha = float(spec.require("alpha"))
    dim = grid.dim
    if dim < 3:
        raise PotentialError("sigma_alpha: 仅对 N ≥ 3 定义")
    if not (0 < c <= hardy_constant(dim) / 4 * (1 + 1e-12)):
        raise PotentialError(f"potential.c: 需要 0 < c ≤ H_N/4 = {hardy_constant(dim) / 4}")
    if not (2 - dim < alpha < 0):
        raise PotentialError(f"potential.alpha: 需要 {2 - dim} < α < 0")
    center = _center(spec, grid)
    values, cells = _sample_with_poles(grid, sigma_alpha_function(c, alpha, center), [center])
    return values, cells, 0.0


def orlicz_parameters_ok(gamma: float, p: float, dim: int = 3) -> Optional[str]:
    """检查 p ∈ (2*, 2*+2) 与 N/p < γ < (N-2)/2，返回错误信息或 None"""
    if dim < 3:
        return "Orlicz 构造要求 N ≥ 3"
    crit = 2.0 * dim / (dim - 2)
    if not (crit < p < crit + 2):
        return f"需要 p ∈ ({crit}, {crit + 2})，收到 {p}"
    if not (dim / p < gamma < (dim - 2) / 2.0):
        return f"需要 {dim}/p < γ < {(dim - 2) / 2}（γ·p = {gamma * p} 时 w ∈ L^p）"
    return None


def orlicz_function(gamma: float, p: float) -> Callable[..., np.ndarray]:
    def func(*coords):
        r = np.sqrt(_radius2(coords, [0.0] * len(coords)))
        w = np.where(r < 1.0, r ** -gamma - 1.0, 0.0)
        return -np.maximum(w, 0.0) ** (p - 2.0)
    return func


def orlicz_supercritical(gamma: float, p: float, grid: Grid) -> PotentialField:
    """
    V_w = -|w|^{p-2}，w = |x|^{-γ} - 1 在单位球外截为0

    Raises:
        PotentialError: 维数不是3或参数越界
    """
    if grid.dim != 3:
        raise PotentialError("orlicz: 仅在三维网格上构造")
    problem = orlicz_parameters_ok(gamma, p, grid.dim)
    if problem:
        raise PotentialError(f"orlicz: {problem}")
    origin = (0.0, 0.0, 0.0)
    values, cells = _sample_with_poles(grid, orlicz_function(gamma, p), [origin])
    return PotentialField.from_values(grid, values, singular_cells=cells,
                                      provenance=f"orlicz(gamma={gamma}, p={p})")


def bump_profile(rho_power: float, rho_scale: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """w(x₁) = ∫₀^{x₁}∫₀^t ρ(s) ds dt，ρ(s) = scale·s^q（q > -1）"""
    q = rho_power

    def w(x1):
        x1 = np.maximum(x1, 0.0)
        return rho_scale * x1 ** (q + 2.0) / ((q + 1.0) * (q + 2.0))
    return w


def _eval_bump(spec, grid):
    q = float(spec.get("rho_power", -0.5))
    scale = float(spec.get("rho_scale", 1.0))
    f = float(spec.get("f", 0.0))
    if q <= -1:
        raise PotentialError("potential.rho_power: 需要 ρ ∈ L¹，即幂次 > -1")
    if scale < 0 or f < 0:
        raise PotentialError("potential.rho_scale/f: 必须非负")
    a = grid.extents[0][0]
    if a < 0:
        raise PotentialError("bump_1d: 第一轴区间须在 [0, ∞) 内")
    w = bump_profile(q, scale)
    x1 = grid.coordinates()[0]
    shift = spec.get("k")
    if shift is None:
        shift = 1.0 - float(np.min(w(x1)))
    shift = float(shift)
    u = w(x1) + shift
    if np.any(u <= 0):
        raise PotentialError("potential.k: w + k 必须为正")
    values = (scale * x1 ** q + f) / u
    return grid.flatten(values), frozenset(), 0.0


def bubble_profile(grid: Grid, center=None) -> GridFunction:
    """Φ_N(x) = (N(N-2))^{(N-2)/4}(1+|x|²)^{(2-N)/2}，满足 -ΔΦ = Φ^{(N+2)/(N-2)}"""
    dim = grid.dim
    if dim < 3:
        raise PotentialError("bubble: 仅对 N ≥ 3 定义")
    c = tuple([0.0] * dim) if center is None else tuple(center)
    coords = grid.coordinates()
    values = (dim * (dim - 2)) ** ((dim - 2) / 4.0) * (1.0 + _radius2(coords, c)) ** ((2 - dim) / 2.0)
    return GridFunction(grid, grid.flatten(values))


def _eval_bubble(spec, grid):
    profile = bubble_profile(grid, _center(spec, grid))
    f0 = float(spec.get("f", 1.0))
    if f0 < 0:
        raise PotentialError("potential.f: 必须非负")
    box = spec.get("f_box")
    if box is None:
        f = np.full(grid.size, f0)
    else:
        from mesh import compact_mask
        f = f0 * compact_mask(grid, box).bits.astype(float)
    fld = from_ground(profile, GridFunction(grid, f))
    return fld.values, fld.singular_cells, 0.0, fld.valid_mask


def _eval_from_ground(spec, grid):
    u = read_grid_function(spec.require("u_path"))
    f_path = spec.get("f_path")
    f = read_grid_function(f_path) if f_path else GridFunction(u.grid, np.zeros(u.grid.size))
    if not u.grid.same_as(grid):
        raise PotentialError("from_ground: u 文件的网格与配置网格不一致")
    fld = from_ground(u, f)
    return fld.values, fld.singular_cells, 0.0, fld.valid_mask


def _eval_divergence(spec, grid):
    components = spec.require("field")
    fld = divergence_form(sample_vector_field(grid, components), grid)
    return fld.values, fld.singular_cells, 0.0


def _evaluate(spec: PotentialSpec, grid: Grid):
    """返回 (values, singular_cells, tail_bound, valid_mask)"""
    variant = spec.variant
    if variant == "constant":
        return np.full(grid.size, float(spec.require("c"))), frozenset(), 0.0, None
    if variant == "sum":
        total = np.zeros(grid.size)
        cells, tail, mask = set(), 0.0, None
        for term in spec.require("terms"):
            v, c, t, m = _evaluate(term, grid)
            total += v
            cells |= set(c)
            tail += t
            if m is not None:
                mask = m if mask is None else (mask & m)
        return total, frozenset(cells), tail, mask
    if variant == "orlicz":
        fld = orlicz_supercritical(float(spec.require("gamma")), float(spec.require("p")), grid)
        return fld.values, fld.singular_cells, 0.0, None
    handlers = {
        "hardy": _eval_hardy,
        "multipolar": _eval_multipolar,
        "dense_pole_series": _eval_dense_poles,
        "sigma_alpha": _eval_sigma_alpha,
        "divergence_form": _eval_divergence,
        "from_ground": _eval_from_ground,
        "bump_1d": _eval_bump,
        "bubble": _eval_bubble,
    }
    result = handlers[variant](spec, grid)
    if len(result) == 3:
        return result + (None,)
    return result


def eval_catalog(spec: PotentialSpec, grid: Grid) -> PotentialField:
    """
    在网格上取样目录中的势

    单元值为中点取样；含极点的闭单元改为自适应细分求积的单元平均
    （相对容差 1e-6，深度 ≤ 12）。稠密极点级数报告尾项界。

    Args:
        spec: 势函数描述
        grid: 网格

    Returns:
        PotentialField
    """
    if spec.variant not in VARIANTS:
        raise PotentialError(f"未知的势函数变体 '{spec.variant}'")
    try:
        values, cells, tail, mask = _evaluate(spec, grid)
    except GridError as e:
        raise PotentialError(f"{spec.variant}: {e}")
    expect = spec.variant == "divergence_form"
    return PotentialField.from_values(grid, values, singular_cells=cells, valid_mask=mask,
                                      tail_bound=tail, expect_nonnegative=expect,
                                      provenance=spec.variant)


# ---------------------------------------------------------------------------
# 由正解反构势、散度型势
# ---------------------------------------------------------------------------

def interior_ring(grid: Grid) -> np.ndarray:
    """与边界相邻的节点（模板会触及边界节点）"""
    ring = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.dim):
        index = [slice(None)] * grid.dim
        index[axis] = 0
        ring[tuple(index)] = True
        index[axis] = -1
        ring[tuple(index)] = True
    return ring


def laplacian_inner(grid: Grid, u: np.ndarray) -> np.ndarray:
    """标准 2N+1 点差分拉普拉斯，只在不触及边界的节点上计算，其余为0"""
    arr = grid.unflatten(u)
    out = np.zeros(grid.shape)
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    for axis, step in enumerate(grid.h):
        if grid.n[axis] < 3:
            return out
        plus = [slice(1, -1)] * grid.dim
        minus = [slice(1, -1)] * grid.dim
        plus[axis] = slice(2, None)
        minus[axis] = slice(None, -2)
        out[inner] += (arr[tuple(plus)] - 2.0 * arr[inner] + arr[tuple(minus)]) / step ** 2
    return out


def from_ground(u: GridFunction, f: GridFunction) -> PotentialField:
    """
    V := (Δu + f)/u，u 为正的网格函数，f ≥ 0

    不做零边界延拓：与边界相邻的节点被标记并排除在装配掩码之外。

    Raises:
        PotentialError: u ≤ 0、f < 0 或形状不符
    """
    grid = u.grid
    if not grid.same_as(f.grid):
        raise PotentialError("from_ground: u 与 f 的网格不一致")
    if np.any(u.values <= 0):
        raise PotentialError("from_ground: u 必须在每个内部节点上为正")
    if np.any(f.values < 0):
        raise PotentialError("from_ground: f 必须非负")
    ring = grid.flatten(interior_ring(grid)) > 0.5
    lap = grid.flatten(laplacian_inner(grid, u.values))
    values = (lap + f.values) / u.values
    values[ring] = 0.0
    valid = Mask(grid, ~ring)
    if valid.count == 0:
        raise PotentialError("from_ground: 网格太粗，去掉边界环后没有节点")
    return PotentialField.from_values(grid, values, valid_mask=valid, provenance="from_ground",
                                      singular_cells=frozenset(int(i) for i in np.nonzero(ring)[0]))


@dataclass(frozen=True)
class VectorField:
    """闭网格（含边界节点）上的向量场取样，形状 (dim, n_1+2, ...)"""

    grid: Grid
    components: np.ndarray = field(repr=False)
    singular_cells: FrozenSet[int] = frozenset()

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        shape = (self.grid.dim,) + tuple(k + 2 for k in self.grid.n)
        if comps.shape != shape:
            raise PotentialError(f"向量场形状 {comps.shape} 应为 {shape}")
        if not np.all(np.isfinite(comps)):
            raise PotentialError("向量场含有非有限值")
        comps = np.ascontiguousarray(comps)
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    def interior(self, axis: int) -> np.ndarray:
        return self.components[axis][tuple(slice(1, -1) for _ in range(self.grid.dim))]


def _component_function(desc: Dict, dim: int) -> Tuple[Callable[..., np.ndarray], List]:
    kind = desc.get("kind", "constant")
    if kind == "constant":
        value = float(desc.get("value", 0.0))
        return (lambda *coords: np.full(np.shape(coords[0]), value)), []
    if kind == "linear":
        axis = int(desc.get("axis", 0))
        slope = float(desc.get("slope", 1.0))
        offset = float(desc.get("offset", 0.0))
        return (lambda *coords: slope * coords[axis] + offset), []
    if kind == "power":
        c = float(desc.get("c", 1.0))
        alpha = float(desc.get("alpha", 0.5))
        center = tuple(float(v) for v in desc.get("center", [0.0] * dim))

        def func(*coords):
            return c * _radius2(coords, center) ** (-alpha / 2.0)
        return func, [center]
    raise PotentialError(f"field.kind: 未知的分量类型 '{kind}'")


def sample_vector_field(grid: Grid, components: Sequence) -> VectorField:
    """
    在闭网格上取样向量场

    Args:
        components: 每个分量为描述字典（constant / linear / power）或可调用对象

    Returns:
        VectorField；含极点的单元使用单元平均并标记
    """
    if len(components) != grid.dim:
        raise PotentialError(f"field: 需要 {grid.dim} 个分量，收到 {len(components)}")
    closure = grid.closure_coordinates()
    comps = []
    cells = set()
    for desc in components:
        if callable(desc):
            func, poles = desc, []
        else:
            func, poles = _component_function(desc, grid.dim)
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.array(np.broadcast_to(func(*closure), closure[0].shape), dtype=float)
        if poles:
            inner_values, singular = _sample_with_poles(grid, func, poles)
            inner = tuple(slice(1, -1) for _ in range(grid.dim))
            values[inner] = grid.unflatten(inner_values)
            cells |= set(singular)
            # 边界节点上的极点不参与内部单元，取其相邻值
            values = np.where(np.isfinite(values), values, 0.0)
        comps.append(values)
    return VectorField(grid, np.array(comps), frozenset(cells))


def divergence_form(F: VectorField, grid: Grid) -> PotentialField:
    """
    V₀ = div_h F + |F|²（中心差分），对应的二次型预期非负

    Raises:
        PotentialError: 网格不符
    """
    if not F.grid.same_as(grid):
        raise PotentialError("divergence_form: 向量场网格与目标网格不一致")
    dim = grid.dim
    div = np.zeros(grid.shape)
    sq = np.zeros(grid.shape)
    for axis, step in enumerate(grid.h):
        comp = F.components[axis]
        plus = [slice(1, -1)] * dim
        minus = [slice(1, -1)] * dim
        plus[axis] = slice(2, None)
        minus[axis] = slice(None, -2)
        div += (comp[tuple(plus)] - comp[tuple(minus)]) / (2.0 * step)
        sq += F.interior(axis) ** 2
    values = grid.flatten(div + sq)
    return PotentialField.from_values(grid, values, singular_cells=F.singular_cells,
                                      expect_nonnegative=True, provenance="divergence_form")
