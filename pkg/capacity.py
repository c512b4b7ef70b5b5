#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
容量模块 - 调和容量 Cap(K;Ω) 与Maz'ya双边判据
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mesh import Grid, GridFunction, Mask, box_mask, full_mask
from potential_catalog import PotentialField, thread_count
from quadratic_form import assemble, qv
from linear_solver import PSOR_OMEGA, PSOR_TOL, obstacle_lower, psor

logger = logging.getLogger(__name__)

# [1/4, 1] 窗口的容差
MAZYA_TOL = 0.05
# 默认二进族中盒子每轴至少包含的单元数
MIN_CELLS = 4

NOT_NONNEGATIVE = "certified-not-nonnegative"
CONSISTENT = "consistent-with-nonnegativity"
FAMILY_TOO_SMALL = "family-too-small"


class CapacityError(ValueError):
    """容量计算的输入不合法"""


def cap(grid: Grid, K: Mask, domain: Optional[Mask] = None, omega: float = PSOR_OMEGA,
        tol: float = PSOR_TOL) -> Tuple[float, GridFunction]:
    """
    调和容量：障碍问题极小元的Dirichlet能量

    Args:
        grid: 网格
        K: 紧集
        domain: 外区域掩码（默认整个盒子）

    Returns:
        (Cap, 容量势 ξ*)
    """
    domain = domain if domain is not None else full_mask(grid)
    if K.count == 0:
        raise CapacityError("紧集 K 为空")
    if not K.issubset(domain):
        raise CapacityError("紧集 K 必须包含在区域内")
    form = assemble(grid, mask=domain)
    result = psor(form, obstacle_lower(K), omega=omega, tol=tol)
    value = qv(form, result.solution.values)
    logger.debug("Cap = %.8g（%d 个节点，%d 次扫描）", value, K.count, result.sweeps)
    return value, result.solution


def dyadic_family(grid: Grid, min_cells: int = MIN_CELLS, domain: Optional[Mask] = None) -> List[Tuple[str, Mask]]:
    """
    区域的全部二进子盒，直到每轴宽度不足 min_cells 个单元

    Returns:
        [(标签, 掩码)]，空掩码被跳过
    """
    family = []
    level = 0
    while True:
        widths = [(b - a) / 2 ** level for a, b in grid.extents]
        if any(w < min_cells * h * (1 - 1e-12) for w, h in zip(widths, grid.h)):
            break
        for cell in itertools.product(range(2 ** level), repeat=grid.dim):
            box = [(a + k * w, a + (k + 1) * w) for (a, _), k, w in zip(grid.extents, cell, widths)]
            mask = box_mask(grid, box)
            if domain is not None:
                mask = mask & domain
            if mask.count:
                family.append((f"L{level}:" + ",".join(str(k) for k in cell), mask))
        level += 1
    return family


@dataclass(frozen=True)
class MazyaEntry:
    label: str
    ratio: float
    capacity: float
    integral: float


@dataclass(frozen=True)
class MazyaReport:
    """sup_K (1/Cap(K))∫_K V⁻ 在给定族上的下界"""

    max_ratio: float
    flag: str
    entries: List[MazyaEntry] = field(default_factory=list)
    tol: float = MAZYA_TOL


def mazya_ratio(field: PotentialField, family: Optional[Sequence] = None, grid: Optional[Grid] = None,
                domain: Optional[Mask] = None, tol: float = MAZYA_TOL) -> MazyaReport:
    """
    Maz'ya判据：r(K) = (Σ_K V⁻·cellvol)/Cap(K) 在族上的最大值

    r > 1+tol 为非负性不成立的证据；r ∈ [1/4-tol, 1+tol] 与非负性相容；
    整个族上 r < 1/4-tol 只说明族太小（定理中的上确界取遍所有紧集）。

    Args:
        field: V⁺ ≡ 0 的势
        family: 掩码列表或 (标签, 掩码) 列表，默认二进族

    Raises:
        CapacityError: V⁺ 不恒为0，或某个 K 的容量为0
    """
    grid = grid if grid is not None else field.grid
    if not field.grid.same_as(grid):
        raise CapacityError("势函数与网格不一致")
    if np.any(field.vplus > 0):
        raise CapacityError("Maz'ya判据要求 V⁺ ≡ 0")
    if family is None:
        family = dyadic_family(grid, domain=domain)
    labelled = [item if isinstance(item, tuple) else (f"K{k}", item) for k, item in enumerate(family)]
    if not labelled:
        raise CapacityError("紧集族为空")

    def evaluate(item):
        label, mask = item
        capacity, _ = cap(grid, mask, domain=domain)
        if capacity <= 0.0:
            raise CapacityError(f"紧集 {label} 的容量为0")
        integral = float(np.sum(field.vminus[mask.bits])) * grid.cellvol
        return MazyaEntry(label, integral / capacity, capacity, integral)

    with ThreadPoolExecutor(max_workers=min(thread_count(), len(labelled))) as pool:
        entries = list(pool.map(evaluate, labelled))
    best = max(e.ratio for e in entries)
    if best > 1.0 + tol:
        flag = NOT_NONNEGATIVE
    elif best >= 0.25 - tol:
        flag = CONSISTENT
    else:
        flag = FAMILY_TOO_SMALL
        logger.warning("Maz'ya比值在整个族上都低于 1/4（最大 %.4g）：族太小，不构成反例", best)
    logger.info("Maz'ya 判据：%d 个紧集，最大比值 %.4g，%s", len(entries), best, flag)
    return MazyaReport(best, flag, entries, tol)
