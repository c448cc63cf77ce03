"""
Эксперты нулевого слоя: bias-эксперты, эксперты по признакам и
байесовская линейная регрессия (BLR) по одному признаку.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

import pog
from errors import ValidationError

logger = logging.getLogger("GGLN.BaseModels")

BASE_NONE = 'none'
BASE_FEATURE = 'feature'
BASE_BLR = 'blr'
BASE_CONSTANT = 'constant'
BASE_MODELS = (BASE_NONE, BASE_FEATURE, BASE_BLR, BASE_CONSTANT)


def _vector_expert(mean, variance, form):
    if form == pog.FULL:
        return pog.FullGaussian(mean, np.eye(len(mean)) / variance)
    return pog.IsotropicGaussian(mean, 1.0 / variance)


def bias_experts(r, D, sigma2_bias=1.0, form=pog.ISOTROPIC):
    """
    Постоянные bias-эксперты, выпуклая оболочка средних которых покрывает [-r, r]^D

    Args:
        r (float): Полуширина диапазона цели (обычно 5 для стандартизованной цели)
        D (int): Размерность цели
        sigma2_bias (float): Дисперсия каждого bias-эксперта
        form (str): Вид экспертов при D >= 2 (isotropic или full)

    Returns:
        list: 2 эксперта при D = 1, иначе 2D экспертов со средними ±rD·e_i
    """
    if not r > 0:
        raise ValidationError(f"r должен быть > 0, получено {r}")
    if D < 1:
        raise ValidationError(f"D должна быть >= 1, получено {D}")
    if D == 1:
        return [pog.UnivariateGaussian(-r, sigma2_bias), pog.UnivariateGaussian(r, sigma2_bias)]
    experts = []
    for i in range(D):
        axis = np.zeros(D)
        axis[i] = r * D
        experts.append(_vector_expert(axis, sigma2_bias, form))
        experts.append(_vector_expert(-axis, sigma2_bias, form))
    return experts


def feature_experts(x, sigma_fixed=1.0):
    """
    Эксперты N(x_j, σ²), по одному на признак

    Args:
        x (np.ndarray): Признаки (d,)
        sigma_fixed (float): Фиксированная ширина σ

    Returns:
        list: d одномерных экспертов
    """
    if not sigma_fixed > 0:
        raise ValidationError(f"sigma_fixed должна быть > 0, получено {sigma_fixed}")
    variance = sigma_fixed ** 2
    return [pog.UnivariateGaussian(xj, variance) for xj in np.asarray(x, dtype=float).reshape(-1)]


def identity_expert(x, variance, form=pog.ISOTROPIC):
    """Один многомерный эксперт N(x, variance·I), центрированный на входе (шумоподавление)"""
    if not variance > 0:
        raise ValidationError(f"variance должна быть > 0, получено {variance}")
    return _vector_expert(np.asarray(x, dtype=float).reshape(-1), variance, form)


@dataclass(frozen=True)
class BLRState:
    """
    Достаточные статистики BLR-модели одного признака

    Args:
        sum_xy, sum_x2, sum_y (float): Накопленные суммы Σxy, Σx², Σy
        n (int): Число наблюдений
        tau (float): Известная точность шума τ
        tau0 (float): Априорная точность τ₀
    """
    sum_xy: float = 0.0
    sum_x2: float = 0.0
    sum_y: float = 0.0
    n: int = 0
    tau: float = 1.0
    tau0: float = 1.0

    def __post_init__(self):
        if self.n < 0 or self.sum_x2 < 0:
            raise ValidationError("n и sum_x2 должны быть неотрицательными")
        if not (self.tau > 0 and self.tau0 > 0):
            raise ValidationError("tau и tau0 должны быть > 0")


def blr_update(state, x, y):
    """Добавляет наблюдение (x, y) к статистикам"""
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValidationError(f"наблюдение BLR должно быть конечным: x={x}, y={y}")
    return replace(state, sum_xy=state.sum_xy + x * y, sum_x2=state.sum_x2 + x * x,
                   sum_y=state.sum_y + y, n=state.n + 1)


def blr_posterior(state):
    """
    Апостериорные параметры наклона θ и сдвига β

    Returns:
        tuple: (μ_θ, τ_θ, μ_β, τ_β)
    """
    tau_theta = state.tau0 + state.tau * state.sum_x2
    tau_beta = state.tau0 + state.tau * state.n
    mu_theta = state.tau * state.sum_xy / tau_theta
    mu_beta = state.tau * state.sum_y / tau_beta
    return mu_theta, tau_theta, mu_beta, tau_beta


def blr_predict(state, x):
    """
    Апостериорное предсказательное распределение N(μ_θx + μ_β, x²/τ_θ + 1/τ_β + 1/τ)

    Args:
        state (BLRState): Статистики
        x (float): Значение признака

    Returns:
        UnivariateGaussian: Эксперт для нулевого слоя
    """
    if not np.isfinite(x):
        raise ValidationError(f"признак должен быть конечным: {x}")
    mu_theta, tau_theta, mu_beta, tau_beta = blr_posterior(state)
    return pog.UnivariateGaussian(mu_theta * x + mu_beta,
                                  x * x / tau_theta + 1.0 / tau_beta + 1.0 / state.tau)


class BLRBank:
    """
    Набор независимых BLR-моделей, по одной на признак, в виде массивов

    Args:
        d (int): Число признаков
        tau (float): Точность шума τ
        tau0 (float): Априорная точность τ₀
    """

    def __init__(self, d, tau=1.0, tau0=1.0):
        self.tau = tau
        self.tau0 = tau0
        self.sum_xy = np.zeros(d)
        self.sum_x2 = np.zeros(d)
        self.sum_y = np.zeros(d)
        self.n = 0

    def predict(self, x):
        """Средние и дисперсии предсказаний всех признаков"""
        tau_theta = self.tau0 + self.tau * self.sum_x2
        tau_beta = self.tau0 + self.tau * self.n
        mean = self.tau * self.sum_xy / tau_theta * x + self.tau * self.sum_y / tau_beta
        var = x * x / tau_theta + 1.0 / tau_beta + 1.0 / self.tau
        return mean, var

    def update(self, x, y):
        self.sum_xy += x * y
        self.sum_x2 += x * x
        self.sum_y += y
        self.n += 1

    def state(self, j):
        """BLRState признака j"""
        return BLRState(float(self.sum_xy[j]), float(self.sum_x2[j]), float(self.sum_y[j]),
                        self.n, self.tau, self.tau0)
