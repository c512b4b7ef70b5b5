#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
网格模块 - 矩形区域上的均匀张量网格（Dirichlet边界）
提供加密、穷竭子区域、紧集掩码以及网格函数的文本导入导出
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

# 单个网格允许的最大内部节点数（加密时检查）
DEFAULT_MAX_NODES = 4_000_000

# 节点落在闭盒边界上的相对容差
SNAP_TOL = 1e-12


class GridError(ValueError):
    """网格构造或网格函数不合法"""


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Grid:
    """均匀张量网格

    节点编号为行主序，第0轴变化最快（即numpy的Fortran顺序）。
    边界节点不存储，隐含取值为0。
    """

    dim: int
    extents: Tuple[Tuple[float, float], ...]
    n: Tuple[int, ...]

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple((b - a) / (k + 1) for (a, b), k in zip(self.extents, self.n))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.h))

    @property
    def hmin(self) -> float:
        return min(self.h)

    def axis_nodes(self, axis: int) -> np.ndarray:
        """某一轴上的内部节点坐标 a + i·h, i=1..n"""
        a, _ = self.extents[axis]
        step = self.h[axis]
        return a + step * np.arange(1, self.n[axis] + 1, dtype=float)

    def axis_closure(self, axis: int) -> np.ndarray:
        """某一轴上包含两端边界节点的坐标"""
        a, _ = self.extents[axis]
        step = self.h[axis]
        return a + step * np.arange(0, self.n[axis] + 2, dtype=float)

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        """内部节点坐标数组（每个形状都是 grid.shape）"""
        return tuple(np.meshgrid(*[self.axis_nodes(k) for k in range(self.dim)], indexing="ij"))

    def closure_coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.axis_closure(k) for k in range(self.dim)], indexing="ij"))

    def points(self) -> np.ndarray:
        """按节点顺序排列的坐标，形状 (size, dim)"""
        return np.stack([c.ravel(order="F") for c in self.coordinates()], axis=1)

    def flatten(self, array: np.ndarray) -> np.ndarray:
        return np.asarray(array, dtype=float).ravel(order="F")

    def unflatten(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.shape, order="F")

    def center(self) -> Tuple[float, ...]:
        return tuple(0.5 * (a + b) for a, b in self.extents)

    def same_as(self, other: "Grid") -> bool:
        return self.dim == other.dim and self.n == other.n and self.extents == other.extents


@dataclass(frozen=True)
class Mask:
    """内部节点上的位集合（紧集K或穷竭成员Ω_m）"""

    grid: Grid
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).ravel(order="F") if np.ndim(self.bits) > 1 \
            else np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.grid.size,):
            raise GridError(f"掩码长度 {bits.shape} 与网格节点数 {self.grid.size} 不一致")
        object.__setattr__(self, "bits", _readonly(bits))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def volume(self) -> float:
        return self.count * self.grid.cellvol

    def __and__(self, other: "Mask") -> "Mask":
        return Mask(self.grid, self.bits & other.bits)

    def __or__(self, other: "Mask") -> "Mask":
        return Mask(self.grid, self.bits | other.bits)

    def __invert__(self) -> "Mask":
        """网格内部节点上的补集"""
        return Mask(self.grid, ~self.bits)

    def issubset(self, other: "Mask") -> bool:
        return bool(np.all(~self.bits | other.bits))

    def as_array(self) -> np.ndarray:
        return self.grid.unflatten(self.bits)


@dataclass(frozen=True)
class GridFunction:
    """网格函数：每个内部节点一个实数值"""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim > 1:
            values = values.ravel(order="F")
        if values.shape != (self.grid.size,):
            raise GridError(f"网格函数长度 {values.shape} 与网格节点数 {self.grid.size} 不一致")
        if not np.all(np.isfinite(values)):
            raise GridError("网格函数含有非有限值")
        object.__setattr__(self, "values", _readonly(values))

    def as_array(self) -> np.ndarray:
        return self.grid.unflatten(self.values)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, values)


def _normalize_extents(dim: int, extents) -> Tuple[Tuple[float, float], ...]:
    ext = np.asarray(extents, dtype=float)
    if ext.shape == (2,):
        ext = np.tile(ext, (dim, 1))
    if ext.shape != (dim, 2):
        raise GridError(f"区域范围的形状 {ext.shape} 与维数 {dim} 不匹配")
    return tuple((float(a), float(b)) for a, b in ext)


def build_grid(dim: int, extents, n: Union[int, Sequence[int]],
               max_nodes: int = DEFAULT_MAX_NODES) -> Grid:
    """
    构造均匀张量网格

    Args:
        dim: 维数，1、2或3
        extents: 每轴区间 (a, b)，单个区间会复制到所有轴
        n: 每轴内部节点数

    Returns:
        Grid
    """
    if dim not in (1, 2, 3):
        raise GridError(f"维数必须是1、2或3，收到 {dim}")
    ext = _normalize_extents(dim, extents)
    counts = tuple(int(k) for k in (np.broadcast_to(np.asarray(n), (dim,))))
    for (a, b) in ext:
        if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
            raise GridError(f"退化的区间 ({a}, {b})")
    for k in counts:
        if k < 1:
            raise GridError(f"每轴内部节点数必须 ≥ 1，收到 {k}")
    total = int(np.prod(counts))
    if total > max_nodes:
        raise GridError(f"节点总数 {total} 超过上限 {max_nodes}")
    return Grid(dim=dim, extents=ext, n=counts)


def refine(grid: Grid, max_nodes: int = DEFAULT_MAX_NODES) -> Grid:
    """每轴 n' = 2n+1，网格步长减半，粗网格节点是细网格节点的子集"""
    return build_grid(grid.dim, grid.extents, [2 * k + 1 for k in grid.n], max_nodes=max_nodes)


def refinement_schedule(grid: Grid, levels: int, max_nodes: int = DEFAULT_MAX_NODES) -> List[Grid]:
    """从给定网格开始的逐级加密序列（含起始网格）"""
    grids = [grid]
    for _ in range(levels - 1):
        grids.append(refine(grids[-1], max_nodes=max_nodes))
    return grids


def box_mask(grid: Grid, box) -> Mask:
    """闭盒内的节点（不检查非空）"""
    bounds = _normalize_extents(grid.dim, box)
    bits = np.ones(grid.shape, dtype=bool)
    for axis, (lo, hi) in enumerate(bounds):
        x = grid.axis_nodes(axis)
        span = grid.extents[axis][1] - grid.extents[axis][0]
        tol = SNAP_TOL * max(span, 1.0)
        inside = (x >= lo - tol) & (x <= hi + tol)
        shape = [1] * grid.dim
        shape[axis] = grid.n[axis]
        bits &= inside.reshape(shape)
    return Mask(grid, grid.flatten(bits) > 0.5)


def full_mask(grid: Grid) -> Mask:
    return Mask(grid, np.ones(grid.size, dtype=bool))


def compact_mask(grid: Grid, box) -> Mask:
    """
    紧集K的掩码：坐标落在闭盒内的内部节点，体积 = 节点数 · Π h_i

    Raises:
        GridError: 盒子超出区域或未捕获任何节点
    """
    bounds = _normalize_extents(grid.dim, box)
    for (lo, hi), (a, b) in zip(bounds, grid.extents):
        tol = SNAP_TOL * max(b - a, 1.0)
        if lo > hi or lo < a - tol or hi > b + tol:
            raise GridError(f"盒子 ({lo}, {hi}) 不在区域 ({a}, {b}) 内")
    mask = box_mask(grid, bounds)
    if mask.count == 0:
        raise GridError(f"盒子 {bounds} 未捕获任何网格节点")
    return mask


def centered_box(grid: Grid, fraction: float = 0.5) -> Tuple[Tuple[float, float], ...]:
    """以区域中心为中心、边长为区域边长 fraction 倍的盒子"""
    box = []
    for a, b in grid.extents:
        c = 0.5 * (a + b)
        half = 0.5 * fraction * (b - a)
        box.append((c - half, c + half))
    return tuple(box)


def ball_mask(grid: Grid, center: Optional[Sequence[float]] = None, radius: float = 1.0,
              strict: bool = True) -> Mask:
    """球形区域的Dirichlet掩码（|x-c| < r 的节点，strict=False 时取 ≤）"""
    c = grid.center() if center is None else tuple(float(v) for v in center)
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coordinates(), c))
    limit = radius * radius
    bits = r2 < limit if strict else r2 <= limit * (1.0 + SNAP_TOL)
    mask = Mask(grid, grid.flatten(bits) > 0.5)
    if mask.count == 0:
        raise GridError(f"半径 {radius} 的球未捕获任何网格节点")
    return mask


def exhaustion(grid: Grid, m: int, within: Optional[Mask] = None) -> List[Mask]:
    """
    穷竭序列 Ω_1 ⋐ Ω_2 ⋐ … ⋐ Ω_m = 全部内部节点

    Ω_k 是每侧收缩 (m-k)/m · L/2 的子盒，吸附到节点。

    Args:
        grid: 网格
        m: 层数
        within: 可选的外层掩码（例如球形区域），每个成员与之取交

    Returns:
        m 个嵌套掩码
    """
    if m < 1:
        raise GridError(f"穷竭层数必须 ≥ 1，收到 {m}")
    masks = []
    for k in range(1, m + 1):
        if k == m:
            mask = full_mask(grid)
        else:
            box = []
            for a, b in grid.extents:
                margin = (m - k) / m * 0.5 * (b - a)
                box.append((a + margin, b - margin))
            mask = box_mask(grid, box)
        if within is not None:
            mask = mask & within
        if mask.count == 0:
            raise GridError(f"穷竭层数 m={m} 过大：Ω_{k} 为空")
        masks.append(mask)
    return masks


def growing_boxes(dim: int, half_widths: Sequence[float], h: float) -> List[Grid]:
    """固定步长 h 下逐渐增大的盒子 (-L, L)^N，用于全空间上的临界性实验"""
    grids = []
    for L in half_widths:
        count = int(round(2.0 * L / h)) - 1
        grids.append(build_grid(dim, (-L, L), count))
    return grids


def sample(grid: Grid, func: Callable[..., np.ndarray]) -> GridFunction:
    """在内部节点上对函数 func(x0, x1, ...) 取样"""
    values = np.broadcast_to(func(*grid.coordinates()), grid.shape)
    return GridFunction(grid, grid.flatten(values))


def closure_values(grid: Grid, func: Callable[..., np.ndarray]) -> np.ndarray:
    """在包含边界节点的闭网格上取样，形状为 n_i + 2"""
    shape = tuple(k + 2 for k in grid.n)
    return np.array(np.broadcast_to(func(*grid.closure_coordinates()), shape), dtype=float)


def pad_zero(grid: Grid, values: np.ndarray) -> np.ndarray:
    """零延拓到闭网格"""
    return np.pad(grid.unflatten(values), 1)


def header_line(grid: Grid) -> str:
    parts = [str(grid.dim)] + [str(k) for k in grid.n]
    for a, b in grid.extents:
        parts += [repr(float(a)), repr(float(b))]
    return " ".join(parts)


def format_grid_function(fn: GridFunction) -> str:
    """网格函数的文本格式：首行为头，之后每行一个值（17位有效数字）"""
    lines = [header_line(fn.grid)]
    lines.extend("%.17g" % v for v in fn.values)
    return "\n".join(lines) + "\n"


def parse_grid_function(text: str) -> GridFunction:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise GridError("空的网格函数文件")
    head = lines[0].split()
    try:
        dim = int(head[0])
        counts = [int(v) for v in head[1:1 + dim]]
        bounds = [float(v) for v in head[1 + dim:1 + 3 * dim]]
    except (ValueError, IndexError) as e:
        raise GridError(f"无法解析网格函数头 '{lines[0]}': {e}")
    if len(counts) != dim or len(bounds) != 2 * dim:
        raise GridError(f"网格函数头字段数量不对: '{lines[0]}'")
    grid = build_grid(dim, np.reshape(bounds, (dim, 2)), counts)
    try:
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as e:
        raise GridError(f"网格函数数据行无法解析: {e}")
    return GridFunction(grid, values)


def write_grid_function(fn: GridFunction, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_grid_function(fn), encoding="utf-8")
    logger.debug("网格函数已写入 %s", path)
    return path


def read_grid_function(path: Union[str, Path]) -> GridFunction:
    path = Path(path)
    if not path.exists():
        raise GridError(f"网格函数文件不存在: {path}")
    return parse_grid_function(path.read_text(encoding="utf-8"))
