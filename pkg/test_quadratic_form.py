#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试离散二次型：装配、矩阵向量乘、稀疏矩阵一致性与散度型恒等式
"""

import math

import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from mesh import GridFunction, Mask, build_grid, centered_box, compact_mask, full_mask, sample
from potential_catalog import PotentialField, sample_vector_field
from quadratic_form import (FormError, as_sparse, assemble, bilinear, lumped_mass, magnetic_identity_check, qv,
                            weighted_mass)


def random_field(grid, seed=0, scale=5.0):
    rng = np.random.default_rng(seed)
    return PotentialField.from_values(grid, rng.uniform(-scale, scale, grid.size))


def test_apply_matches_sparse_matrix():
    """matrix-free 作用与稀疏矩阵一致（含子掩码）"""
    grid = build_grid(2, [(0.0, 1.0), (0.0, 2.0)], [6, 9])
    mask = compact_mask(grid, centered_box(grid, 0.7))
    form = assemble(grid, random_field(grid), mask)
    A = as_sparse(form)
    x = np.random.default_rng(1).normal(size=grid.size)
    assert_allclose(form.apply(x), A @ form.restrict(x), atol=1e-10)
    assert np.all(form.apply(x)[~mask.bits] == 0.0)
    assert qv(form, x) == pytest.approx(float(form.restrict(x) @ (A @ form.restrict(x))), rel=1e-12)


def test_bilinear_symmetric():
    """a(ξ,η) = a(η,ξ)，a(ξ,ξ) = qv(ξ)"""
    grid = build_grid(3, (0.0, 1.0), 5)
    form = assemble(grid, random_field(grid, seed=4))
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=grid.size), rng.normal(size=grid.size)
    assert bilinear(form, x, y) == bilinear(form, y, x)
    assert bilinear(form, x, x) == pytest.approx(qv(form, x), rel=1e-12)


def test_laplacian_sine_modes():
    """-Δ_h sin(kπx) = (2/h²)(1-cos kπh) sin(kπx)"""
    grid = build_grid(1, (0.0, 1.0), 31)
    form = assemble(grid)
    h = grid.h[0]
    for k in (1, 2, 5):
        u = sample(grid, lambda x: np.sin(k * math.pi * x)).values
        lam = 2.0 / h ** 2 * (1.0 - math.cos(k * math.pi * h))
        assert_allclose(form.apply(u), grid.cellvol * lam * u, atol=1e-9)


def test_gershgorin_bounds_spectrum():
    """Gershgorin 界不小于矩阵的谱范数"""
    grid = build_grid(2, (0.0, 1.0), 6)
    form = assemble(grid, random_field(grid, seed=2))
    eigs = la.eigh(as_sparse(form).toarray(), eigvals_only=True)
    assert form.gershgorin_norm() >= np.max(np.abs(eigs)) * (1 - 1e-12)
    assert_allclose(form.diagonal(), as_sparse(form).diagonal())


def test_assemble_truncation_and_valid_mask():
    """截断只作用于负部；势的有效掩码与区域掩码取交"""
    grid = build_grid(1, (0.0, 1.0), 7)
    values = np.array([-100.0, -3.0, 2.0, 50.0, -1.0, -20.0, 0.0])
    valid = Mask(grid, np.array([False, True, True, True, True, True, False]))
    fld = PotentialField.from_values(grid, values, valid_mask=valid)
    form = assemble(grid, fld, truncation=10.0)
    assert form.mask.count == 5
    assert_allclose(form.potential, [0.0, -3.0, 2.0, 50.0, -1.0, -10.0, 0.0])

    with pytest.raises(FormError):
        assemble(grid, fld, Mask(grid, ~valid.bits))
    with pytest.raises(FormError):
        assemble(grid, random_field(build_grid(1, (0.0, 1.0), 8)))


def test_masses():
    """集中质量、加权质量与负权重检查"""
    grid = build_grid(2, (0.0, 1.0), 3)
    m = lumped_mass(grid)
    assert_allclose(m.diag, grid.cellvol)
    K = compact_mask(grid, [(0.5, 0.5), (0.0, 1.0)])
    mk = weighted_mass(grid, K)
    assert mk.support.count == K.count
    assert mk.norm2(np.ones(grid.size)) == pytest.approx(K.volume)
    assert_allclose(mk.scaled(2.0).diag, 2.0 * mk.diag)
    w = GridFunction(grid, np.arange(grid.size, dtype=float))
    assert_allclose(weighted_mass(grid, w).diag, np.arange(grid.size) * grid.cellvol)
    with pytest.raises(FormError):
        weighted_mass(grid, -np.ones(grid.size))


def test_shift_and_restriction():
    """平移势函数与限制到子掩码"""
    grid = build_grid(2, (0.0, 1.0), 5)
    form = assemble(grid)
    x = np.random.default_rng(7).normal(size=grid.size)
    shifted = form.with_shift(3.0)
    assert qv(shifted, x) == pytest.approx(qv(form, x) + 3.0 * grid.cellvol * float(x @ x), rel=1e-12)
    sub = form.on_mask(compact_mask(grid, [(0.0, 0.5), (0.0, 1.0)]))
    assert sub.mask.count < full_mask(grid).count
    assert qv(sub, x) == pytest.approx(qv(form, sub.restrict(x)), rel=1e-12)


def test_magnetic_identity_zero_field_exact():
    """F ≡ 0 时恒等式两边完全相同"""
    grid = build_grid(2, (0.0, 1.0), 9)
    F = sample_vector_field(grid, [{"kind": "constant", "value": 0.0}] * 2)
    xi = np.random.default_rng(0).normal(size=grid.size)
    assert magnetic_identity_check(F, xi, grid) <= 1e-14 * (1.0 + qv(assemble(grid), xi))


def test_magnetic_identity_defect_shrinks():
    """光滑 F 与固定的光滑 ξ：缺陷在三次加密中每次至少减半"""
    defects = []
    for n in (7, 15, 31):
        grid = build_grid(2, (0.0, 1.0), n)
        F = sample_vector_field(grid, [{"kind": "linear", "axis": 1, "slope": 2.0, "offset": 0.5},
                                       {"kind": "linear", "axis": 0, "slope": -1.0, "offset": 1.0}])
        xi = sample(grid, lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y) * (1.0 + x))
        defects.append(magnetic_identity_check(F, xi, grid))
    assert defects[0] > 0
    assert defects[1] <= 0.5 * defects[0]
    assert defects[2] <= 0.5 * defects[1]


def test_magnetic_identity_rejects_singular_support():
    """测试函数不能触及奇异单元"""
    grid = build_grid(3, (-1.0, 1.0), 5)
    F = sample_vector_field(grid, [{"kind": "power", "c": 0.1, "alpha": 0.5}] + [{"kind": "constant"}] * 2)
    assert F.singular_cells
    with pytest.raises(FormError):
        magnetic_identity_check(F, np.ones(grid.size), grid)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
