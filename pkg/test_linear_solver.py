#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试线性求解：共轭梯度、Dirichlet问题与L¹估计、H⁻¹范数、投影SOR
"""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from numpy.testing import assert_allclose

from mesh import GridFunction, Mask, build_grid, compact_mask, sample
from potential_catalog import PotentialField
from quadratic_form import FormError, as_sparse, assemble, qv
from linear_solver import (SolverError, cg_solve, complementarity_residual, dirichlet_solve, hminus1_norm,
                           obstacle_lower, obstacle_solve, pcg, psor)


def test_cg_matches_direct_solve():
    """CG 与稀疏直接解一致"""
    grid = build_grid(2, (0.0, 1.0), 15)
    rng = np.random.default_rng(0)
    form = assemble(grid, PotentialField.from_values(grid, rng.uniform(0.0, 20.0, grid.size)))
    b = rng.normal(size=grid.size)
    u = cg_solve(form, b)
    direct = spla.spsolve(as_sparse(form).tocsc(), b)
    assert_allclose(u.values, direct, rtol=1e-7, atol=1e-9)


def test_cg_zero_rhs():
    """右端为0时直接返回0"""
    result = pcg(lambda x: 2.0 * x, np.zeros(5), np.full(5, 2.0))
    assert result.converged and result.iterations == 0
    assert np.all(result.x == 0.0)


def test_cg_negative_curvature_and_iteration_limit():
    """负定算子报告负曲率；迭代预算耗尽报告未收敛"""
    grid = build_grid(1, (0.0, 1.0), 7)
    negative = assemble(grid, PotentialField.from_values(grid, np.full(grid.size, -1000.0)))
    with pytest.raises(SolverError) as info:
        cg_solve(negative, np.ones(grid.size))
    assert info.value.negative_curvature

    square = assemble(build_grid(2, (0.0, 1.0), 15))
    with pytest.raises(SolverError) as info:
        cg_solve(square, np.random.default_rng(1).normal(size=225), maxit=2)
    assert not info.value.negative_curvature
    assert info.value.iterations == 2


def test_hminus1_norm_sine():
    """f = sin(πx)：‖f‖²_{H⁻¹} = 1/(2λ_h)，λ_h = (2/h²)(1-cos πh)"""
    grid = build_grid(1, (0.0, 1.0), 63)
    f = sample(grid, lambda x: np.sin(math.pi * x))
    h = grid.h[0]
    lam = 2.0 / h ** 2 * (1.0 - math.cos(math.pi * h))
    assert hminus1_norm(grid, f) == pytest.approx(math.sqrt(1.0 / (2.0 * lam)), rel=1e-8)


def test_dirichlet_solve_estimate():
    """(A₀ + W)u = Mf 的残差与L¹估计"""
    grid = build_grid(2, (0.0, 1.0), 15)
    K = compact_mask(grid, [(0.25, 0.75), (0.25, 0.75)])
    W = np.where(K.bits, 10.0, 0.0)
    f = GridFunction(grid, np.ones(grid.size))
    u, report = dirichlet_solve(grid, W, f, K)
    form = assemble(grid, PotentialField.from_values(grid, W))
    assert_allclose(form.apply(u.values), grid.cellvol * f.values, atol=1e-8)
    assert report.lhs > 0
    assert report.holds

    with pytest.raises(FormError):
        dirichlet_solve(grid, -W, f, K)


def test_psor_capacity_potential_1d():
    """一维障碍问题：K 上为1，两侧线性，能量单调下降"""
    grid = build_grid(1, (0.0, 1.0), 191)
    K = compact_mask(grid, [(1.0 / 3.0, 2.0 / 3.0)])
    form = assemble(grid)
    result = psor(form, obstacle_lower(K), track_energy=True)
    x = result.solution.values
    nodes = grid.axis_nodes(0)
    expected = np.clip(np.minimum(3.0 * nodes, 3.0 * (1.0 - nodes)), 0.0, 1.0)
    assert_allclose(x, expected, atol=1e-6)
    assert np.all(x[K.bits] >= 1.0)
    energies = np.array(result.energies)
    assert np.all(np.diff(energies) <= 1e-12 * energies[0])
    assert qv(form, x) == pytest.approx(6.0, rel=1e-6)
    assert result.complementarity <= 1e-6
    assert complementarity_residual(form, x, obstacle_lower(K)) == result.complementarity


def test_complementarity_with_infinite_lower_bound():
    """K 外下界为 -∞ 时不产生 nan，也不触发浮点无效运算"""
    grid = build_grid(1, (0.0, 1.0), 31)
    K = compact_mask(grid, [(0.4, 0.6)])
    form = assemble(grid)
    lower = obstacle_lower(K)
    with np.errstate(invalid="raise"):
        value = complementarity_residual(form, np.where(K.bits, 1.0, 0.5), lower)
        result = psor(form, lower)
    assert np.isfinite(value) and value > 0
    assert np.isfinite(result.complementarity)
    assert result.complementarity <= 1e-8


def test_obstacle_solve_mask_and_errors():
    """掩码形式的下界、空 K 以及扫描上限"""
    grid = build_grid(2, (0.0, 1.0), 15)
    form = assemble(grid)
    K = compact_mask(grid, [(0.4, 0.6), (0.4, 0.6)])
    xi = obstacle_solve(form, K)
    assert np.all(xi.values[K.bits] >= 1.0 - 1e-12)
    assert np.all(xi.values >= -1e-6) and np.all(xi.values <= 1.0 + 1e-6)

    with pytest.raises(FormError):
        obstacle_solve(form, Mask(grid, np.zeros(grid.size, dtype=bool)))
    with pytest.raises(SolverError):
        psor(form, obstacle_lower(K), max_sweeps=1)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
