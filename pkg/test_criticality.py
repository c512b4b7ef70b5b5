#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试临界性分类：超临界见证、谱隙衰减拟合、零序列证据
"""

import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import criticality
from mesh import build_grid, compact_mask, refinement_schedule
from potential_catalog import PotentialField, PotentialSpec, eval_catalog
from quadratic_form import as_sparse, assemble, qv, weighted_mass
from spectral_solver import EigenError
from criticality import (CRITICAL, INCONCLUSIVE, SUBCRITICAL, SUPERCRITICAL, ClassifySettings, CriticalityError,
                         classify, domain_mask, fit_rate, gap_on_growing_boxes, level_form, null_sequence,
                         supercritical_witness)


def unit_schedule(dim=1, n=31, levels=3):
    return refinement_schedule(build_grid(dim, (0.0, 1.0), n), levels)


def test_fit_rate():
    """μ = h² 时斜率为2；含0时无法拟合"""
    history = [(h, 3.0 * h * h) for h in (0.1, 0.05, 0.025)]
    assert fit_rate(history) == pytest.approx(2.0)
    assert fit_rate([(0.1, 1.0), (0.05, 0.0), (0.025, 1.0)]) is None
    assert fit_rate([(0.1, 1.0)]) is None


def test_laplacian_subcritical():
    """(0,1) 上的 -Δ：谱隙不随 h 衰减"""
    verdict = classify(None, unit_schedule())
    assert verdict.tag == SUBCRITICAL
    assert verdict.witness is None
    assert len(verdict.gap_history) == 3
    assert all(mu > 0 for _, mu in verdict.gap_history)
    assert abs(verdict.fitted_rate) <= 0.5
    assert verdict.weight == "chi_K"


def test_principal_shift_is_critical():
    """-Δ - λ₁ʰ：每层谱隙为0，带零序列证据"""
    verdict = classify(None, unit_schedule(), settings=ClassifySettings(shift="principal"))
    assert verdict.tag == CRITICAL
    assert verdict.evidence is not None
    assert len(verdict.evidence.members) == 3
    for level in verdict.levels:
        assert level.shift < 0
        assert abs(level.gap) <= 1e-8
    for member, K in zip(verdict.evidence.members, verdict.evidence.K):
        grid = member.grid
        assert float(np.sum(np.abs(member.values[K.bits]))) * grid.cellvol == pytest.approx(1.0)


def test_fixed_shift_straddles_zero():
    """固定位移 -π²：离散主特征值略低于 π²，|μ(h)| 按 h² 衰减"""
    verdict = classify(None, unit_schedule(), settings=ClassifySettings(shift=-math.pi ** 2))
    assert verdict.tag == CRITICAL
    assert any("h²" in note for note in verdict.notes)
    gaps = [mu for _, mu in verdict.gap_history]
    assert all(mu < 0 for mu in gaps)
    for coarse, fine in zip(gaps, gaps[1:]):
        assert coarse / fine == pytest.approx(4.0, abs=0.5)
    assert verdict.fitted_rate == pytest.approx(2.0, abs=0.2)


def test_hardy_3d_supercritical():
    """三维 c=2 的 Hardy 势远超 H₃ = 1/4：存在 qv < 0 的见证"""
    spec = PotentialSpec.from_config({"variant": "hardy", "c": 2.0})
    schedule = [build_grid(3, (-1.0, 1.0), n) for n in (11, 23, 47)]
    verdict = classify(spec, schedule, K=[(-0.5, 0.5)] * 3)
    assert verdict.tag == SUPERCRITICAL
    assert verdict.witness is not None
    form, _ = level_form(spec, verdict.witness.grid)
    assert qv(form, verdict.witness) < 0
    assert any(level.witness_qv is not None for level in verdict.levels)


def hardy_1d_form(c, n=2047):
    grid = build_grid(1, (0.0, 1.0), n)
    return assemble(grid, eval_catalog(PotentialSpec.from_config({"variant": "hardy", "c": c}), grid))


def test_hardy_1d_witness():
    """一维 Hardy：c = 0.8·(1/4) 无见证，c = 4·(1/4) 有见证"""
    assert supercritical_witness(hardy_1d_form(0.2)) is None
    witness = supercritical_witness(hardy_1d_form(1.0))
    assert witness is not None
    assert qv(hardy_1d_form(1.0), witness) < 0


def test_growing_boxes_gap_decreases():
    """一维 -Δ 在 ℝ 上临界：盒子增大时谱隙单调减小"""
    history = gap_on_growing_boxes(1, [1.0, 2.0, 4.0, 8.0], 0.125)
    gaps = [mu for _, mu in history]
    assert all(mu > 0 for mu in gaps)
    for a, b in zip(gaps, gaps[1:]):
        assert b < a


def test_null_sequence():
    """零序列：归一化后 qv 很小；非临界结论被拒绝"""
    schedule = unit_schedule()
    settings = ClassifySettings(shift="principal")
    forms = [level_form(None, grid, settings=settings)[0] for grid in schedule]
    evidence = null_sequence(forms, None)
    assert len(evidence.qv_values) == 3
    assert all(abs(v) <= 1e-8 for v in evidence.qv_values)

    subcritical = classify(None, schedule)
    with pytest.raises(CriticalityError):
        null_sequence(forms, None, subcritical)


def test_classify_errors():
    """少于三层、未知区域描述"""
    with pytest.raises(CriticalityError):
        classify(None, unit_schedule(levels=2))
    grid = build_grid(2, (-1.0, 1.0), 15)
    with pytest.raises(CriticalityError):
        domain_mask(grid, {"annulus": {}})
    ball = domain_mask(grid, {"ball": {"radius": 1.0}})
    assert ball.count < grid.size


def test_classify_with_weight_and_field_factory():
    """势可以是 grid → field 工厂，权重可以是网格函数工厂"""

    def weight(grid):
        return np.ones(grid.size)

    def zero(grid):
        return PotentialField.from_values(grid, np.zeros(grid.size))

    verdict = classify(zero, unit_schedule(), weight=weight)
    assert verdict.tag == SUBCRITICAL
    assert verdict.weight == "weight"
    # w ≡ 1：谱隙就是主特征值
    h = verdict.levels[-1].h
    assert verdict.gap_history[-1][1] == pytest.approx(2.0 / h ** 2 * (1.0 - math.cos(math.pi * h)), rel=1e-6)


def constant_spec(c):
    return PotentialSpec.from_config({"variant": "constant", "c": c})


def test_constant_negative_supercritical():
    """V ≡ -200：K 外的二次型也不定，加权束无下界，仍按见证判为超临界"""
    spec = constant_spec(-200.0)
    verdict = classify(spec, unit_schedule(n=15))
    assert verdict.tag == SUPERCRITICAL
    assert verdict.witness is not None
    form, _ = level_form(spec, verdict.witness.grid)
    assert qv(form, verdict.witness) < 0
    assert any("unbounded" in note for note in verdict.notes)
    assert all(level.indefinite for level in verdict.levels)
    assert all(level.witness_qv < 0 for level in verdict.levels)


def test_witness_survives_gap_failure(monkeypatch):
    """加权谱隙迭代失败时，已复核的见证不被丢弃"""

    def failing_gap(*args, **kwargs):
        raise EigenError("budget exhausted")

    monkeypatch.setattr(criticality, "weighted_gap", failing_gap)
    verdict = classify(constant_spec(-200.0), unit_schedule(n=15))
    assert verdict.tag == SUPERCRITICAL
    assert verdict.witness is not None
    assert len(verdict.levels) == 3
    assert all(level.indefinite and math.isnan(level.gap) for level in verdict.levels)
    assert any("weighted gap not computed" in note for note in verdict.notes)
    assert verdict.fitted_rate is None


def test_witness_survives_later_level_failure(monkeypatch):
    """第二层特征值求解失败：第一层的见证仍给出超临界"""
    original = criticality.supercritical_witness
    calls = []

    def flaky(form, tol=criticality.EIG_TOL):
        calls.append(form.grid.n)
        if len(calls) > 1:
            raise EigenError("budget exhausted")
        return original(form, tol=tol)

    monkeypatch.setattr(criticality, "supercritical_witness", flaky)
    verdict = classify(constant_spec(-200.0), unit_schedule(n=15))
    assert verdict.tag == SUPERCRITICAL
    assert verdict.witness is not None
    assert verdict.witness.grid.n == unit_schedule(n=15)[0].n
    assert len(verdict.levels) == 1
    assert any("eigensolver failure" in note for note in verdict.notes)

    # 没有任何见证时同样的失败给出不确定
    def always_failing(form, tol=criticality.EIG_TOL):
        raise EigenError("budget exhausted")

    monkeypatch.setattr(criticality, "supercritical_witness", always_failing)
    assert classify(None, unit_schedule(n=15)).tag == INCONCLUSIVE


def test_fit_rate_rejects_nonfinite_tail():
    """尾部含 nan 或 inf 时不拟合；负值按绝对值拟合"""
    assert fit_rate([(0.1, 1.0), (0.05, math.inf), (0.025, 0.1)]) is None
    assert fit_rate([(0.1, -1.0), (0.05, -0.25), (0.025, -0.0625)]) == pytest.approx(2.0)
    assert fit_rate([(0.1, 1.0), (0.05, math.nan), (0.025, 0.1)]) is None


def test_principal_shift_is_critical_2d():
    """二维 -Δ - λ₁ʰ：每层谱隙为0，零序列在 K 上按 L¹ 归一"""
    verdict = classify(None, unit_schedule(dim=2, n=15), settings=ClassifySettings(shift="principal"))
    assert verdict.tag == CRITICAL
    assert verdict.evidence is not None
    assert len(verdict.evidence.members) == 3
    for level in verdict.levels:
        assert abs(level.gap) <= 1e-8
    for member, K in zip(verdict.evidence.members, verdict.evidence.K):
        grid = member.grid
        assert float(np.sum(np.abs(member.values[K.bits]))) * grid.cellvol == pytest.approx(1.0, rel=1e-12)
    assert all(abs(v) <= 1e-8 for v in verdict.evidence.qv_values)


def test_middle_third_subcritical_matches_eigsh():
    """K = [1/3, 2/3]：次临界；最细层的谱隙与稀疏广义特征值求解一致"""
    schedule = unit_schedule()
    K = [(1.0 / 3.0, 2.0 / 3.0)]
    verdict = classify(None, schedule, K=K)
    assert verdict.tag == SUBCRITICAL
    assert all(mu > 0 for _, mu in verdict.gap_history)

    grid = schedule[-1]
    form, _ = level_form(None, grid)
    mass = weighted_mass(grid, compact_mask(grid, K))
    # M_w 奇异：取 M_w v = θ A v 的最大 θ，μ = 1/θ
    theta = spla.eigsh(sp.diags(mass.diag).tocsc(), k=1, M=as_sparse(form).tocsc(), which="LA",
                       return_eigenvectors=False)[0]
    assert verdict.levels[-1].gap == pytest.approx(1.0 / theta, rel=1e-6)



if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
