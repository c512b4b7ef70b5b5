#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
二次型模块 - 离散Schrödinger二次型 Q_V 与加权质量矩阵
刚度部分无矩阵存储（2N+1点模板，按单元体积缩放），势函数部分为对角
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
import scipy.sparse as sp

from mesh import Grid, GridFunction, Mask, full_mask
from potential_catalog import PotentialField, VectorField, divergence_form

logger = logging.getLogger(__name__)


class FormError(ValueError):
    """二次型装配或求值的输入不合法"""


def _values(grid: Grid, xi) -> np.ndarray:
    if isinstance(xi, GridFunction):
        if not xi.grid.same_as(grid):
            raise FormError("网格函数与二次型的网格不一致")
        return xi.values
    arr = np.asarray(xi, dtype=float)
    if arr.shape != (grid.size,):
        raise FormError(f"向量长度 {arr.shape} 与网格节点数 {grid.size} 不一致")
    return arr


def face_differences(grid: Grid, values: np.ndarray) -> List[np.ndarray]:
    """
    每个轴向上的面差商 (ξ_{i+e} - ξ_i)/h，边界节点按0处理

    第 a 个数组沿第 a 轴长度为 n_a+1，其余轴为内部长度。
    """
    padded = np.pad(grid.unflatten(values), 1)
    out = []
    for axis, step in enumerate(grid.h):
        index = [slice(1, -1)] * grid.dim
        index[axis] = slice(None)
        out.append(np.diff(padded[tuple(index)], axis=axis) / step)
    return out


def face_means(grid: Grid, values: np.ndarray) -> List[np.ndarray]:
    """每个面两端节点值的平均（边界节点为0）"""
    padded = np.pad(grid.unflatten(values), 1)
    out = []
    for axis in range(grid.dim):
        index = [slice(1, -1)] * grid.dim
        index[axis] = slice(None)
        part = padded[tuple(index)]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out.append(0.5 * (part[tuple(lo)] + part[tuple(hi)]))
    return out


def stiffness_energy(grid: Grid, values: np.ndarray) -> float:
    """Σ_faces (Δξ/h)²·cellvol"""
    return grid.cellvol * sum(float(np.sum(d * d)) for d in face_differences(grid, values))


def laplacian_apply(grid: Grid, values: np.ndarray) -> np.ndarray:
    """cellvol·(-Δ_h)ξ，零边界"""
    arr = grid.unflatten(values)
    padded = np.pad(arr, 1)
    out = np.zeros(grid.shape)
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    for axis, step in enumerate(grid.h):
        plus = [slice(1, -1)] * grid.dim
        minus = [slice(1, -1)] * grid.dim
        plus[axis] = slice(2, None)
        minus[axis] = slice(None, -2)
        out += (2.0 * padded[inner] - padded[tuple(plus)] - padded[tuple(minus)]) / (step * step)
    return grid.flatten(out) * grid.cellvol


@dataclass(frozen=True)
class DiscreteForm:
    """
    离散二次型 A_V = cellvol·(-Δ_h) + diag(V·cellvol)

    掩码外的节点视为Dirichlet零值：作用结果在掩码外为0。
    """

    grid: Grid
    mask: Mask
    potential: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        pot = np.asarray(self.potential, dtype=float)
        if pot.shape != (self.grid.size,) or not np.all(np.isfinite(pot)):
            raise FormError("势函数对角必须是与网格等长的有限数组")
        pot = np.where(self.mask.bits, pot, 0.0)
        pot.setflags(write=False)
        object.__setattr__(self, "potential", pot)

    @property
    def support(self) -> np.ndarray:
        return self.mask.bits

    @property
    def stiffness_diagonal(self) -> float:
        return self.grid.cellvol * sum(2.0 / (h * h) for h in self.grid.h)

    def diagonal(self) -> np.ndarray:
        """掩码内的对角元，掩码外为0"""
        diag = self.stiffness_diagonal + self.potential * self.grid.cellvol
        return np.where(self.mask.bits, diag, 0.0)

    def gershgorin_norm(self) -> float:
        """‖A‖ 的Gershgorin上界"""
        return 2.0 * self.stiffness_diagonal + float(np.max(np.abs(self.potential))) * self.grid.cellvol

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.mask.bits, x, 0.0)

    def apply(self, x) -> np.ndarray:
        """矩阵向量乘 A x（x 在掩码外视为0）"""
        x = self.restrict(_values(self.grid, x))
        y = laplacian_apply(self.grid, x) + self.potential * self.grid.cellvol * x
        return self.restrict(y)

    def with_shift(self, c: float, label: Optional[str] = None) -> "DiscreteForm":
        """势函数整体平移 V → V + c"""
        return DiscreteForm(self.grid, self.mask, self.potential + c, label or self.label)

    def on_mask(self, mask: Mask) -> "DiscreteForm":
        """限制到子掩码（子区域上的Dirichlet问题）"""
        return DiscreteForm(self.grid, self.mask & mask, self.potential, self.label)


@dataclass(frozen=True)
class MassMatrix:
    """对角质量矩阵 m_i = w_i·cellvol"""

    grid: Grid
    diag: np.ndarray = field(repr=False)

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.shape != (self.grid.size,) or not np.all(np.isfinite(diag)):
            raise FormError("质量矩阵对角必须是与网格等长的有限数组")
        if np.any(diag < 0):
            raise FormError("质量矩阵对角元必须非负")
        diag = np.ascontiguousarray(diag)
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    @property
    def support(self) -> Mask:
        return Mask(self.grid, self.diag > 0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.diag * x

    def norm2(self, x: np.ndarray) -> float:
        return float(np.dot(x, self.diag * x))

    def scaled(self, t: float) -> "MassMatrix":
        return MassMatrix(self.grid, self.diag * t)


def lumped_mass(grid: Grid, mask: Optional[Mask] = None) -> MassMatrix:
    """标准集中质量 cellvol·I（可限制到掩码）"""
    diag = np.full(grid.size, grid.cellvol)
    if mask is not None:
        diag = np.where(mask.bits, diag, 0.0)
    return MassMatrix(grid, diag)


def assemble(grid: Grid, potential: Optional[PotentialField] = None, mask: Optional[Mask] = None,
             truncation: Optional[float] = None) -> DiscreteForm:
    """
    装配离散二次型

    qv(ξ) = Σ_faces (Δξ/h)²·cellvol + Σ_nodes (V⁺-V⁻)ξ²·cellvol，ξ 在掩码外为0。
    势函数带有效掩码（如由正解反构的势）时与之取交。

    Args:
        grid: 网格
        potential: 势函数，None 表示 V ≡ 0
        mask: 区域掩码，默认全部内部节点
        truncation: 给定时负部截断为 min(V⁻, truncation)

    Returns:
        DiscreteForm
    """
    mask = mask if mask is not None else full_mask(grid)
    if not mask.grid.same_as(grid):
        raise FormError("掩码与网格不一致")
    if potential is None:
        values = np.zeros(grid.size)
        label = "laplacian"
    else:
        if not potential.grid.same_as(grid):
            raise FormError("势函数与网格不一致")
        vminus = potential.vminus
        if truncation is not None:
            vminus = np.minimum(vminus, truncation)
        values = potential.vplus - vminus
        if potential.valid_mask is not None:
            mask = mask & potential.valid_mask
        label = potential.provenance
    if mask.count == 0:
        raise FormError("装配掩码为空")
    return DiscreteForm(grid, mask, values, label)


def qv(form: DiscreteForm, xi) -> float:
    """二次型的值 qv(ξ) = a(ξ, ξ)"""
    x = form.restrict(_values(form.grid, xi))
    grid = form.grid
    return stiffness_energy(grid, x) + grid.cellvol * float(np.sum(form.potential * x * x))


def bilinear(form: DiscreteForm, xi, eta) -> float:
    """双线性形式 a(ξ, η)，按面逐项相乘，关于两个参数严格对称"""
    grid = form.grid
    x = form.restrict(_values(grid, xi))
    y = form.restrict(_values(grid, eta))
    grad = sum(float(np.sum(dx * dy)) for dx, dy in zip(face_differences(grid, x), face_differences(grid, y)))
    return grid.cellvol * (grad + float(np.sum(form.potential * (x * y))))


def weighted_mass(grid: Grid, w: Union[GridFunction, Mask, np.ndarray]) -> MassMatrix:
    """
    加权集中质量 m_i = w_i·cellvol

    Args:
        w: 非负网格函数、掩码（特征函数）或数组

    Raises:
        FormError: 存在负权重
    """
    if isinstance(w, Mask):
        if not w.grid.same_as(grid):
            raise FormError("掩码与网格不一致")
        weights = w.bits.astype(float)
    else:
        weights = _values(grid, w)
    if np.any(weights < 0):
        raise FormError(f"权重在 {int(np.sum(weights < 0))} 个节点上为负")
    return MassMatrix(grid, weights * grid.cellvol)


def as_sparse(form: DiscreteForm) -> sp.csr_matrix:
    """二次型的稀疏矩阵（掩码外的行列为0），用于直接求解与校验"""
    grid = form.grid
    total = sp.csr_matrix((grid.size, grid.size))
    for axis, (step, k) in enumerate(zip(grid.h, grid.n)):
        tri = sp.diags([-np.ones(k - 1), 2.0 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1]) / (step * step)
        term = None
        # 第0轴变化最快：Kronecker积中位于最右侧
        for other in reversed(range(grid.dim)):
            block = tri if other == axis else sp.identity(grid.n[other])
            term = block if term is None else sp.kron(term, block)
        total = total + term
    total = total * grid.cellvol + sp.diags(form.potential * grid.cellvol)
    proj = sp.diags(form.mask.bits.astype(float))
    return (proj @ total @ proj).tocsr()


def magnetic_identity_check(F: VectorField, xi, grid: Grid) -> float:
    """
    散度型恒等式的离散缺陷

    |qv_{V₀}(ξ) - Σ_faces |D_hξ - F̄ ξ̄|²·cellvol|，其中 V₀ = div_h F + |F|²，
    F̄、ξ̄ 为面两端的平均。交叉项离散后恰好抵消，缺陷只来自 |F|²ξ² 的位置差。

    Raises:
        FormError: ξ 在向量场的奇异单元上非零
    """
    x = _values(grid, xi)
    if not F.grid.same_as(grid):
        raise FormError("向量场与网格不一致")
    touched = [i for i in F.singular_cells if x[i] != 0.0]
    if touched:
        raise FormError(f"测试函数触及向量场的 {len(touched)} 个奇异单元")
    form = assemble(grid, divergence_form(F, grid))
    lhs = qv(form, x)
    diffs = face_differences(grid, x)
    means = face_means(grid, x)
    rhs = 0.0
    for axis in range(grid.dim):
        comp = F.components[axis]
        index = [slice(1, -1)] * grid.dim
        index[axis] = slice(None)
        part = comp[tuple(index)]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        fbar = 0.5 * (part[tuple(lo)] + part[tuple(hi)])
        rhs += float(np.sum((diffs[axis] - fbar * means[axis]) ** 2))
    rhs *= grid.cellvol
    return abs(lhs - rhs)
