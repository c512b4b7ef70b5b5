#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试势函数探测：强平衡不等式的经验探测与振荡势的可积性
"""

import math

import numpy as np
import pytest

from mesh import build_grid, compact_mask
from potential_catalog import PotentialError, PotentialField
from potential_probes import (balance_probe, bump_battery, oscillation_probe, sphere_abs_first_coordinate,
                              spike_battery)

EPSILONS = [1e-2, 1e-3, 1e-4, 1e-5]


def test_sphere_constant():
    """∫_{S^{N-1}} |ω₁|：二维为4，三维为2π"""
    assert sphere_abs_first_coordinate(2) == pytest.approx(4.0)
    assert sphere_abs_first_coordinate(3) == pytest.approx(2.0 * math.pi)


def test_oscillation_divergent():
    """α + β < -1：I(ε) 随 ε → 0 发散"""
    report = oscillation_probe(0.0625, -0.9, -0.2, EPSILONS)
    assert report.divergent
    assert report.tail_slope > 0.03
    assert all(b > a for a, b in zip(report.integrals, report.integrals[1:]))
    assert report.epsilons == EPSILONS


def test_oscillation_integrable():
    """α + β > -1：I(ε) 收敛，尾部斜率低于容差"""
    report = oscillation_probe(0.0625, -0.3, -0.2, EPSILONS)
    assert not report.divergent
    assert report.tail_slope < 0.03
    assert report.integrals[-1] == pytest.approx(report.integrals[-2], rel=0.05)


def test_oscillation_scales_with_sqrt_c():
    """I(ε) 与 √c 成正比"""
    a = oscillation_probe(0.0625, -0.5, -0.2, [1e-1, 1e-2])
    b = oscillation_probe(0.25, -0.5, -0.2, [1e-1, 1e-2])
    np.testing.assert_allclose(b.integrals, 2.0 * np.array(a.integrals), rtol=1e-12)


def test_oscillation_parameter_checks():
    """参数越界与 ε 序列检查"""
    with pytest.raises(PotentialError):
        oscillation_probe(0.0625, -1.5, -0.2, EPSILONS)
    with pytest.raises(PotentialError):
        oscillation_probe(0.0625, -0.5, -0.6, EPSILONS)
    with pytest.raises(PotentialError):
        oscillation_probe(0.0, -0.5, -0.2, EPSILONS)
    with pytest.raises(PotentialError):
        oscillation_probe(0.0625, -0.5, -0.2, [1e-3, 1e-2])
    with pytest.raises(PotentialError):
        oscillation_probe(0.0625, -0.5, -0.2, [1e-2])


@pytest.fixture
def sets():
    grid = build_grid(1, (0.0, 1.0), 63)
    K = compact_mask(grid, [(0.4, 0.6)])
    U = compact_mask(grid, [(0.2, 0.8)])
    return grid, K, U


def test_batteries(sets):
    """尖峰以 K 中节点为中心；鼓包支集在 U 内"""
    grid, K, U = sets
    spikes = spike_battery(grid, K)
    assert spikes
    for xi in spikes:
        assert K.bits[int(np.argmax(xi.values))]
    bumps = bump_battery(grid, K, U, seed=3)
    assert bumps
    for xi in bumps:
        assert np.all(xi.values[~U.bits] == 0.0)


def test_balance_plausible(sets):
    """V ≡ 1：比值不小于 ∫_U|ξ|/∫_K|ξ| ≥ 1"""
    grid, K, U = sets
    report = balance_probe(PotentialField.from_values(grid, np.ones(grid.size)), K, U)
    assert report.verdict == "plausibly-balanced"
    assert report.best_constant_estimate >= 1.0
    assert report.witness is None
    assert report.battery_size > 0 and report.skipped == 0


def test_balance_violation(sets):
    """V⁺ 很大时常数估计很小，给出见证"""
    grid, K, U = sets
    report = balance_probe(PotentialField.from_values(grid, np.full(grid.size, 1e6)), K, U)
    assert report.verdict == "violation-witness"
    assert report.best_constant_estimate <= 0.05
    assert report.witness is not None


def test_balance_errors(sets):
    """K ⊄ U、V⁺ ≡ 0 以及空测试族"""
    grid, K, U = sets
    ones = PotentialField.from_values(grid, np.ones(grid.size))
    with pytest.raises(PotentialError):
        balance_probe(ones, U, K)
    with pytest.raises(PotentialError):
        balance_probe(PotentialField.from_values(grid, -np.ones(grid.size)), K, U)
    with pytest.raises(PotentialError):
        balance_probe(ones, K, U, battery=[])


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
