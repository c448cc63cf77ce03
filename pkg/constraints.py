"""
Допустимое множество весов, лог-барьер и жёсткие "страховочные" проекции.

Ограничения линейны по w: коробка [w_min, w_max] на каждый вес, границы
на смешанную точность Σ wᵢ aᵢ ∈ [1/σ²_max, 1/σ²_min] (aᵢ: скалярная
точность i-го входа) и, при необходимости, границы на смешанное среднее.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

import pog
from errors import DegenerateFeasibilityError, InfeasibleBarrierError, ValidationError

logger = logging.getLogger("GGLN.Constraints")

FEASIBILITY_TOLERANCE = 1e-9
_SLACK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ConstraintSet:
    """
    Выпуклое допустимое множество весов нейрона

    Args:
        w_max (float): Верхняя граница каждого веса (b >= 1)
        w_min (float): Нижняя граница каждого веса (жёсткий клиппинг)
        sigma2_min (float): Минимальная смешанная дисперсия
        sigma2_max (float): Максимальная смешанная дисперсия
        mu_min (float): Нижняя граница смешанного среднего (None: выключено)
        mu_max (float): Верхняя граница смешанного среднего (None: выключено)
        xi (float): Барьерная константа ξ
        w_min_barrier (float): Положение нижнего полюса барьера
        use_barrier (bool): Добавлять ли ξΦ(w) к функции потерь
        clip_variance (bool): Нижнюю границу дисперсии держать клиппингом
            выходов при выводе; веса по ней не проецируются
    """
    w_max: float = 1000.0
    w_min: float = 0.0
    sigma2_min: float = 1e-3
    sigma2_max: float = 1e3
    mu_min: Optional[float] = None
    mu_max: Optional[float] = None
    xi: float = 1e-4
    w_min_barrier: float = 1e-6
    use_barrier: bool = True
    clip_variance: bool = False

    def __post_init__(self):
        if not 0 < self.sigma2_min < self.sigma2_max:
            raise ValidationError(
                f"требуется 0 < sigma2_min < sigma2_max, получено {self.sigma2_min}, {self.sigma2_max}")
        if self.w_max < 1:
            raise ValidationError(f"w_max должен быть >= 1, получено {self.w_max}")
        if self.w_min != 0:
            raise ValidationError("нижняя граница весов фиксирована и равна 0")
        if not self.xi > 0:
            raise ValidationError(f"xi должен быть > 0, получено {self.xi}")
        if not 0 <= self.w_min_barrier < self.w_max:
            raise ValidationError(f"некорректный w_min_barrier: {self.w_min_barrier}")
        if self.mu_min is not None and self.mu_max is not None and self.mu_min >= self.mu_max:
            raise ValidationError("требуется mu_min < mu_max")

    @property
    def precision_min(self):
        return 1.0 / self.sigma2_max

    @property
    def precision_max(self):
        return 1.0 / self.sigma2_min

    @property
    def weight_precision_max(self):
        """Верхняя граница Σwa, которую держат проекция и барьер"""
        return np.inf if self.clip_variance else self.precision_max

    @property
    def has_mean_bounds(self):
        return self.mu_min is not None or self.mu_max is not None


def _mean_rows(form, mu, a, cs):
    """Линейные строки ограничений на смешанное среднее: Σ ωᵢ(μᵢ − μ_max) ≤ 0 и т.д."""
    rows = []
    if not cs.has_mean_bounds:
        return rows
    if form != pog.UNIVARIATE:
        raise ValidationError("ограничения на смешанное среднее поддерживаются только в одномерном случае")
    if cs.mu_max is not None:
        rows.append(a * (mu - cs.mu_max))
    if cs.mu_min is not None:
        rows.append(a * (cs.mu_min - mu))
    return rows


def barrier_terms(W, form, mu, unc, cs, strict=True):
    """
    Значение и градиент Φ(w) = Σ_k −log(u_k − A_kᵀw) для каждой строки W

    Args:
        W (np.ndarray): Веса (K, m)
        form (str): Вид входных экспертов
        mu, unc: Входные эксперты нейронов (общие для слоя)
        cs (ConstraintSet): Ограничения
        strict (bool): Если True, недопустимая точка вызывает ошибку; иначе
            нарушенные строки пропускаются (их держит страховочная проекция)

    Returns:
        tuple: (values (K,), gradients (K, m))
    """
    W = np.atleast_2d(W)
    a = pog.scalar_precision(form, unc)
    p = W @ a
    terms = [
        # (slack, градиент slack по w)
        (cs.w_max - W, -np.ones_like(W)),
        (W - cs.w_min_barrier, np.ones_like(W)),
        ((p - cs.precision_min)[:, None], a[None, :]),
    ]
    if not cs.clip_variance:
        terms.append(((cs.precision_max - p)[:, None], -a[None, :]))
    for r in _mean_rows(form, mu, a, cs):
        terms.append(((-(W @ r))[:, None], -r[None, :]))

    values = np.zeros(W.shape[0])
    grads = np.zeros_like(W)
    for slack, dslack in terms:
        feasible = slack > 0
        if strict and not np.all(feasible):
            raise InfeasibleBarrierError("барьер вычислен в недопустимой точке")
        safe = np.where(feasible, slack, 1.0)
        values -= np.where(feasible, np.log(safe), 0.0).sum(axis=1)
        grads -= np.where(feasible, dslack / safe, 0.0)
    return values, grads


def barrier_penalty(w, experts, cs):
    """
    Лог-барьер Φ(w) и его градиент для одного нейрона

    Args:
        w (array-like): Строго допустимые веса
        experts (list): Входные эксперты
        cs (ConstraintSet): Ограничения

    Returns:
        tuple: (value, gradient)
    """
    form, mu, unc = pog.stack_experts(experts)
    w = pog.as_weights(w, len(experts))
    values, grads = barrier_terms(w[None, :], form, mu, unc, cs, strict=True)
    return float(values[0]), grads[0]


def _project_row(w, a, cs):
    """
    Проекция одной строки: клиппинг в коробку, затем проекция на нарушенную
    гиперплоскость точности и повторный клиппинг. Если повторный клиппинг
    снова нарушает границу, проекция повторяется по оставшимся свободным
    координатам.
    """
    cap = cs.weight_precision_max
    w = np.clip(w, cs.w_min, cs.w_max)
    for _ in range(w.size + 1):
        p = w @ a
        if p > cap * (1 + _SLACK_TOLERANCE):
            target, free = cap, w > cs.w_min
        elif p < cs.precision_min * (1 - _SLACK_TOLERANCE):
            target, free = cs.precision_min, w < cs.w_max
        else:
            break
        direction = np.where(free, a, 0.0)
        norm2 = direction @ direction
        if norm2 == 0:
            break
        w = np.clip(w - direction * (p - target) / norm2, cs.w_min, cs.w_max)
    if not np.any(w > 0):
        raise DegenerateFeasibilityError("проекция обнулила все веса")
    p = w @ a
    if not (cs.precision_min * (1 - FEASIBILITY_TOLERANCE) <= p <= cap * (1 + FEASIBILITY_TOLERANCE)):
        raise DegenerateFeasibilityError(
            f"граница точности недостижима в коробке весов: Σwa = {p:.6g}")
    return w


def backstop_rows(W, form, unc, cs):
    """
    Страховочная проекция для каждой строки W

    Args:
        W (np.ndarray): Веса (K, m), допускаются недопустимые
        form (str): Вид входных экспертов
        unc: Неопределённости входов
        cs (ConstraintSet): Ограничения

    Returns:
        tuple: (спроецированные веса (K, m), число строк, где понадобилась проекция точности)
    """
    a = pog.scalar_precision(form, unc)
    W = np.clip(np.atleast_2d(W), cs.w_min, cs.w_max)
    p = W @ a
    bad = np.flatnonzero((p > cs.weight_precision_max) | (p < cs.precision_min) | ~np.any(W > 0, axis=1))
    for k in bad:
        W[k] = _project_row(W[k], a, cs)
    return W, bad.size


def backstop_project(w, experts, cs):
    """
    Жёсткая проекция весов одного нейрона в допустимое множество

    Args:
        w (array-like): Веса (возможно недопустимые)
        experts (list): Входные эксперты
        cs (ConstraintSet): Ограничения

    Returns:
        np.ndarray: Допустимые веса
    """
    form, _, unc = pog.stack_experts(experts)
    w = np.array(w, dtype=float).reshape(-1)
    if w.size != len(experts):
        raise ValidationError(f"число весов {w.size} не совпадает с числом экспертов {len(experts)}")
    if not np.all(np.isfinite(w)):
        raise ValidationError("веса должны быть конечными")
    projected, _ = backstop_rows(w[None, :], form, unc, cs)
    return projected[0]
