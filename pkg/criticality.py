#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
临界性分类 - 超临界见证搜索、加权谱隙、加密外推与零序列证据

离散问题在固定网格上总是"次临界"的；临界性由谱隙随 h 的衰减率判断。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from mesh import Grid, GridFunction, Mask, ball_mask, centered_box, compact_mask, full_mask, growing_boxes
from potential_catalog import PotentialField, PotentialSpec, eval_catalog
from quadratic_form import DiscreteForm, MassMatrix, assemble, qv, weighted_mass
from spectral_solver import EIG_TOL, EigenError, principal_eig, reference_eigenvalue, weighted_gap

logger = logging.getLogger(__name__)

SUPERCRITICAL = "Supercritical"
SUBCRITICAL = "Subcritical"
CRITICAL = "Critical"
INCONCLUSIVE = "Inconclusive"

WITNESS_FACTOR = 1e-8


class CriticalityError(ValueError):
    """分类流程的输入不合法"""


@dataclass(frozen=True)
class ClassifySettings:
    """分类阈值（均可由配置覆盖）"""

    slope_critical: float = 1.5
    slope_subcritical: float = 0.5
    gap_threshold: float = 1e-3
    critical_factor: float = 10.0
    zero_tol: float = 1e-8
    fit_levels: int = 3
    eig_tol: float = EIG_TOL
    shift: Union[None, str, float] = None
    shift_tol: float = 1e-12

    @classmethod
    def from_config(cls, config: dict) -> "ClassifySettings":
        known = {k: v for k, v in (config or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class LevelRecord:
    h: float
    n: Tuple[int, ...]
    gap: float
    indefinite: bool
    principal: Optional[float]
    witness_qv: Optional[float]
    shift: float = 0.0


@dataclass(frozen=True)
class NullSequenceEvidence:
    members: List[GridFunction] = field(repr=False)
    qv_values: List[float]
    K: List[Mask] = field(repr=False)

    @property
    def decreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.qv_values, self.qv_values[1:]))


@dataclass(frozen=True)
class CriticalityVerdict:
    tag: str
    witness: Optional[GridFunction] = field(default=None, repr=False)
    gap_history: List[Tuple[float, float]] = field(default_factory=list)
    fitted_rate: Optional[float] = None
    weight: str = "chi_K"
    levels: List[LevelRecord] = field(default_factory=list)
    evidence: Optional[NullSequenceEvidence] = field(default=None, repr=False)
    notes: List[str] = field(default_factory=list)


def witness_threshold(form: DiscreteForm) -> float:
    """η = 1e-8·(2N/h² + max|V|)"""
    grid = form.grid
    return WITNESS_FACTOR * (2 * grid.dim / grid.hmin ** 2 + float(np.max(np.abs(form.potential))))


def supercritical_witness(form: DiscreteForm, tol: float = EIG_TOL) -> Optional[GridFunction]:
    """
    主特征值低于 -η 时返回特征向量作为见证（qv 直接复核为负）

    Raises:
        EigenError: 特征值迭代预算耗尽（调用方按不确定处理）
    """
    result = principal_eig(form, tol=tol)
    if result.value >= -witness_threshold(form):
        return None
    energy = qv(form, result.vector)
    if energy >= 0.0:
        logger.warning("特征值 %.3e 为负但 qv(witness) = %.3e 未复核为负", result.value, energy)
        return None
    return result.vector


def fit_rate(history: Sequence[Tuple[float, float]], levels: int = 3) -> Optional[float]:
    """对最后若干层拟合 log|μ| 对 log h 的斜率"""
    tail = [(h, abs(mu)) for h, mu in history[-levels:]]
    if len(tail) < 2 or any(not math.isfinite(mu) or mu <= 0.0 for _, mu in tail):
        return None
    hs = np.log([h for h, _ in tail])
    mus = np.log([mu for _, mu in tail])
    return float(np.polyfit(hs, mus, 1)[0])


def domain_mask(grid: Grid, domain: Optional[dict]) -> Mask:
    if not domain:
        return full_mask(grid)
    if "ball" in domain:
        ball = domain["ball"]
        return ball_mask(grid, ball.get("center"), float(ball.get("radius", 1.0)))
    if "box" in domain:
        return compact_mask(grid, domain["box"])
    raise CriticalityError(f"domain: 未知的区域描述 {sorted(domain)}")


def _k_mask(grid: Grid, K, form_mask: Mask) -> Mask:
    if K is None:
        mask = compact_mask(grid, centered_box(grid, 0.5))
    elif isinstance(K, Mask):
        mask = K
    elif callable(K):
        mask = K(grid)
    else:
        mask = compact_mask(grid, K)
    mask = mask & form_mask
    if mask.count == 0:
        raise CriticalityError("紧集 K 与区域掩码的交为空")
    return mask


def _weight_mass(grid: Grid, weight, Kmask: Mask) -> MassMatrix:
    if weight is None:
        return weighted_mass(grid, Kmask)
    if callable(weight):
        return weighted_mass(grid, weight(grid))
    return weighted_mass(grid, weight)


def level_form(potential, grid: Grid, domain: Optional[dict] = None, settings: ClassifySettings = ClassifySettings()
               ) -> Tuple[DiscreteForm, float]:
    """某一层的二次型，按设置做谱位移；返回 (form, 位移量)"""
    if isinstance(potential, PotentialSpec):
        fld = eval_catalog(potential, grid)
    elif callable(potential):
        fld = potential(grid)
    else:
        fld = potential
    form = assemble(grid, fld, domain_mask(grid, domain)) if fld is not None else \
        assemble(grid, mask=domain_mask(grid, domain))
    shift = 0.0
    if settings.shift == "principal":
        shift = -principal_eig(form, tol=settings.shift_tol).value
    elif settings.shift is not None:
        shift = float(settings.shift)
    if shift:
        form = form.with_shift(shift)
    return form, shift


def classify(potential, schedule: Sequence[Grid], K=None, weight=None, domain: Optional[dict] = None,
             settings: ClassifySettings = ClassifySettings()) -> CriticalityVerdict:
    """
    分类流程

    (1) 每层搜索超临界见证；(2) 计算 μ(h) = weighted_gap(form_h, M_w)（默认 w = χ_K）；
    (3) 对最后三层拟合 log|μ| 对 log h：斜率 ≥ 1.5 且 |μ_fin| ≤ 10·μ_scale·h² 判为临界，
    各层 μ ≥ 1e-3·λ_scale 且斜率 ≤ 0.5 判为次临界，否则不确定。
    各层 |μ| 都不超过 zero_tol 时直接判为临界（精确消去情形）。
    每层都有见证但 |μ| 按 h² 衰减时（固定位移跨零），按外推判为临界。

    Args:
        potential: PotentialSpec、PotentialField 工厂 grid → field，或 None（V ≡ 0）
        schedule: 至少三层的网格序列
        K: 紧集描述（盒子、Mask 或 grid → Mask），默认中心半边长盒子
        weight: 权重（默认 χ_K）
        domain: 区域描述，例如 {"ball": {"radius": 1.0}}

    Raises:
        CriticalityError: 层数少于3
    """
    if len(schedule) < 3:
        raise CriticalityError(f"分类至少需要3层加密，收到 {len(schedule)}")
    levels: List[LevelRecord] = []
    forms: List[DiscreteForm] = []
    masses: List[MassMatrix] = []
    vectors: List[Optional[GridFunction]] = []
    witnesses: List[Optional[GridFunction]] = []
    notes: List[str] = []
    scale_w = None
    for grid in schedule:
        try:
            form, shift = level_form(potential, grid, domain, settings)
            witness = supercritical_witness(form, tol=settings.eig_tol)
        except EigenError as e:
            logger.warning("第 %s 层特征值求解失败：%s", grid.n, e)
            notes.append(f"eigensolver failure at n={list(grid.n)}: {e}")
            return _early_verdict(levels, witnesses, weight, notes)
        Kmask = _k_mask(grid, K, form.mask)
        mass = _weight_mass(grid, weight, Kmask)
        try:
            gap = weighted_gap(form, mass, tol=settings.eig_tol)
        except EigenError as e:
            if witness is None:
                logger.warning("第 %s 层加权谱隙求解失败：%s", grid.n, e)
                notes.append(f"eigensolver failure at n={list(grid.n)}: {e}")
                return _early_verdict(levels, witnesses, weight, notes)
            # 见证已复核：谱隙缺失只记录，不改变结论
            logger.warning("第 %s 层有见证但加权谱隙未收敛：%s", grid.n, e)
            notes.append(f"weighted gap not computed at n={list(grid.n)}: {e}")
            gap = None
        if gap is not None and gap.unbounded:
            notes.append(f"weighted pencil unbounded below at n={list(grid.n)}")
        total = float(np.sum(np.where(form.support, mass.diag, 0.0)))
        scale_w = reference_eigenvalue(grid) * grid.cellvol * form.mask.count / total
        mu = gap.value if gap is not None else math.nan
        levels.append(LevelRecord(grid.hmin, tuple(grid.n), mu, True if gap is None else gap.indefinite, None,
                                  qv(form, witness) if witness is not None else None, shift))
        forms.append(form)
        masses.append(mass)
        vectors.append(gap.vector if gap is not None else None)
        witnesses.append(witness)
        logger.info("n=%s h=%.4g：μ=%.6e%s", list(grid.n), grid.hmin, mu,
                    "（有见证）" if witness is not None else "")

    history = [(l.h, l.gap) for l in levels]
    rate = fit_rate(history, settings.fit_levels)
    h_fin = levels[-1].h
    mu_fin = levels[-1].gap
    L_min = min(b - a for a, b in schedule[-1].extents)
    mu_scale = scale_w / L_min ** 2
    decays = rate is not None and rate >= settings.slope_critical and \
        abs(mu_fin) <= settings.critical_factor * mu_scale * h_fin ** 2
    label = _weight_label(weight)

    if any(w is not None for w in witnesses):
        if all(w is not None for w in witnesses) and decays:
            notes.append("sign-straddling discretization: |μ(h)| decays like h², critical by extrapolation")
            evidence = _evidence(forms, masses, vectors, settings)
            return CriticalityVerdict(CRITICAL, evidence.members[-1], history, rate, label, levels, evidence, notes)
        index = max(i for i, w in enumerate(witnesses) if w is not None)
        return CriticalityVerdict(SUPERCRITICAL, witnesses[index], history, rate, label, levels, None, notes)

    if all(abs(mu) <= settings.zero_tol for _, mu in history):
        notes.append("gap vanishes at every level")
        evidence = _evidence(forms, masses, vectors, settings)
        return CriticalityVerdict(CRITICAL, evidence.members[-1], history, rate, label, levels, evidence, notes)
    if decays:
        evidence = _evidence(forms, masses, vectors, settings)
        return CriticalityVerdict(CRITICAL, evidence.members[-1], history, rate, label, levels, evidence, notes)
    threshold = settings.gap_threshold * scale_w
    if all(mu >= threshold for _, mu in history) and rate is not None and rate <= settings.slope_subcritical:
        return CriticalityVerdict(SUBCRITICAL, None, history, rate, label, levels, None, notes)
    logger.warning("分类不确定：μ 历史 %s，斜率 %s", [f"{mu:.3e}" for _, mu in history], rate)
    notes.append("no decision band matched")
    return CriticalityVerdict(INCONCLUSIVE, None, history, rate, label, levels, None, notes)


def _early_verdict(levels: List[LevelRecord], witnesses: List[Optional[GridFunction]], weight,
                   notes: List[str]) -> CriticalityVerdict:
    """求解失败时的结论：之前的层已有见证则为超临界，否则不确定"""
    history = [(l.h, l.gap) for l in levels]
    found = [i for i, w in enumerate(witnesses) if w is not None]
    if found:
        return CriticalityVerdict(SUPERCRITICAL, witnesses[found[-1]], history, None,
                                  _weight_label(weight), levels, None, notes)
    return CriticalityVerdict(INCONCLUSIVE, None, history, None, _weight_label(weight), levels, None, notes)


def _weight_label(weight) -> str:
    if weight is None:
        return "chi_K"
    return getattr(weight, "__name__", type(weight).__name__)


def _evidence(forms, masses, vectors, settings) -> NullSequenceEvidence:
    members, values, ks = [], [], []
    for form, mass, vector in zip(forms, masses, vectors):
        if vector is None:
            vector = weighted_gap(form, mass, tol=settings.eig_tol).vector
        member, value, K = _normalize_member(form, mass, vector)
        members.append(member)
        values.append(value)
        ks.append(K)
    return NullSequenceEvidence(members, values, ks)


def _normalize_member(form: DiscreteForm, mass: MassMatrix, vector: GridFunction):
    grid = form.grid
    K = Mask(grid, (mass.diag > 0) & form.support)
    l1 = float(np.sum(np.abs(vector.values[K.bits]))) * grid.cellvol
    if l1 <= 0.0:
        raise CriticalityError("零序列成员在 K 上恒为0")
    member = GridFunction(grid, vector.values / l1)
    return member, qv(form, member), K


def null_sequence(forms: Sequence[DiscreteForm], K, verdict: Optional[CriticalityVerdict] = None,
                  tol: float = EIG_TOL) -> NullSequenceEvidence:
    """
    零序列证据：每层取加权谱隙的极小元并归一化 Σ_K|ξ|·cellvol = 1

    Raises:
        CriticalityError: 给定的结论不是临界
    """
    if verdict is not None and verdict.tag != CRITICAL:
        raise CriticalityError(f"零序列只对临界结论有意义，收到 {verdict.tag}")
    members, values, ks = [], [], []
    for form in forms:
        Kmask = _k_mask(form.grid, K, form.mask)
        mass = weighted_mass(form.grid, Kmask)
        gap = weighted_gap(form, mass, tol=tol)
        if gap.vector is None:
            raise CriticalityError("加权束无下界，无法构造零序列")
        member, value, Kmask = _normalize_member(form, mass, gap.vector)
        members.append(member)
        values.append(value)
        ks.append(Kmask)
    return NullSequenceEvidence(members, values, ks)


def gap_on_growing_boxes(dim: int, half_widths: Sequence[float], h: float, K_half: float = 0.5,
                         potential=None, tol: float = EIG_TOL) -> List[Tuple[float, float]]:
    """
    固定 K = [-K_half, K_half]^N、固定步长下盒子 (-L, L)^N 增大时的谱隙 μ(L)

    −Δ 在 ℝ¹、ℝ² 上临界：μ(L) 随 L 增大趋于0。
    """
    out = []
    for grid, L in zip(growing_boxes(dim, half_widths, h), half_widths):
        form, _ = level_form(potential, grid)
        Kmask = compact_mask(grid, [(-K_half, K_half)] * dim)
        gap = weighted_gap(form, weighted_mass(grid, Kmask), tol=tol)
        out.append((float(L), gap.value))
        logger.info("L=%g：μ=%.6e", L, gap.value)
    return out
