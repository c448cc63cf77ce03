"""
Взвешенные произведения гауссовских экспертов (PoG).

Модуль содержит типы экспертов трёх видов (одномерный, изотропный,
с полной матрицей точности), замкнутые формулы произведения, точную
отрицательную лог-плотность нейрона, её аналитический градиент и гессиан
редуцированной функции потерь.

Каждая операция существует в двух видах: публичная функция над списком
экспертов и "ядро" над массивами, которое обрабатывает сразу целый слой
нейронов (строки матрицы весов W формы (K, m)). Сеть использует ядра.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import DegenerateProductError, ValidationError

logger = logging.getLogger("GGLN.PoG")

LOG_2PI = math.log(2.0 * math.pi)
PD_TOLERANCE = 1e-9  # относительно наибольшего элемента матрицы

UNIVARIATE = 'univariate'
ISOTROPIC = 'isotropic'
FULL = 'full'
FORMS = (UNIVARIATE, ISOTROPIC, FULL)


def _finite(value, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: ожидаются конечные значения, получено {value!r}")
    return arr


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UnivariateGaussian:
    """Одномерный эксперт N(mean, variance)"""
    mean: float
    variance: float

    form = UNIVARIATE

    def __post_init__(self):
        _finite(self.mean, 'mean')
        _finite(self.variance, 'variance')
        if not self.variance > 0:
            raise ValidationError(f"variance должна быть > 0, получено {self.variance}")
        object.__setattr__(self, 'mean', float(self.mean))
        object.__setattr__(self, 'variance', float(self.variance))

    @property
    def dim(self):
        return 1

    @property
    def precision(self):
        return 1.0 / self.variance


@dataclass(frozen=True, eq=False)
class IsotropicGaussian:
    """Изотропный эксперт N(mean, precision⁻¹·I)"""
    mean: np.ndarray
    precision: float

    form = ISOTROPIC

    def __post_init__(self):
        mean = _finite(self.mean, 'mean')
        if mean.ndim != 1 or mean.size == 0:
            raise ValidationError(f"mean должен быть D-вектором, форма {mean.shape}")
        _finite(self.precision, 'precision')
        if not self.precision > 0:
            raise ValidationError(f"precision должна быть > 0, получено {self.precision}")
        object.__setattr__(self, 'mean', _frozen(mean))
        object.__setattr__(self, 'precision', float(self.precision))

    @property
    def dim(self):
        return self.mean.size

    @property
    def variance(self):
        return 1.0 / self.precision


@dataclass(frozen=True, eq=False)
class FullGaussian:
    """Эксперт с полной матрицей точности N(mean, precision_matrix⁻¹)"""
    mean: np.ndarray
    precision_matrix: np.ndarray

    form = FULL

    def __post_init__(self):
        mean = _finite(self.mean, 'mean')
        prec = _finite(self.precision_matrix, 'precision_matrix')
        if mean.ndim != 1 or prec.shape != (mean.size, mean.size):
            raise ValidationError(
                f"несогласованные формы mean {mean.shape} и precision_matrix {prec.shape}")
        scale = np.abs(prec).max(initial=0.0)
        if np.max(np.abs(prec - prec.T), initial=0.0) > PD_TOLERANCE * scale:
            raise ValidationError("precision_matrix не симметрична")
        if scale == 0 or np.linalg.eigvalsh(prec).min() <= PD_TOLERANCE * scale:
            raise ValidationError("precision_matrix не положительно определена")
        object.__setattr__(self, 'mean', _frozen(mean))
        object.__setattr__(self, 'precision_matrix', _frozen(prec))

    @property
    def dim(self):
        return self.mean.size

    @property
    def covariance(self):
        return np.linalg.inv(self.precision_matrix)


def expert_form(experts):
    """
    Проверяет, что все эксперты одного вида и одной размерности

    Args:
        experts (list): Список экспертов

    Returns:
        tuple: (вид, размерность D)
    """
    if len(experts) == 0:
        raise ValidationError("требуется хотя бы один эксперт")
    form, dim = experts[0].form, experts[0].dim
    for e in experts[1:]:
        if e.form != form:
            raise ValidationError(f"смешение видов экспертов: {form} и {e.form}")
        if e.dim != dim:
            raise ValidationError(f"эксперты разной размерности: {dim} и {e.dim}")
    return form, dim


def stack_experts(experts):
    """
    Упаковывает экспертов в массивы для ядер

    Returns:
        tuple: (вид, means, uncertainty) где uncertainty: дисперсии (m,)
            для одномерного вида, точности (m,) для изотропного и
            матрицы точности (m, D, D) для полного
    """
    form, _ = expert_form(experts)
    if form == UNIVARIATE:
        return form, np.array([e.mean for e in experts]), np.array([e.variance for e in experts])
    if form == ISOTROPIC:
        return form, np.stack([e.mean for e in experts]), np.array([e.precision for e in experts])
    return form, np.stack([e.mean for e in experts]), np.stack([e.precision_matrix for e in experts])


def unstack_expert(form, mean, uncertainty):
    """Обратная операция к stack_experts для одного эксперта"""
    if form == UNIVARIATE:
        return UnivariateGaussian(float(mean), float(uncertainty))
    if form == ISOTROPIC:
        return IsotropicGaussian(mean, float(uncertainty))
    return FullGaussian(mean, uncertainty)


def as_weights(w, m):
    """
    Проверяет вектор весов: m неотрицательных конечных чисел

    Args:
        w (array-like): Веса
        m (int): Ожидаемое число весов

    Returns:
        np.ndarray: Веса как float-массив
    """
    w = _finite(w, 'weights').reshape(-1)
    if w.size != m:
        raise ValidationError(f"число весов {w.size} не совпадает с числом экспертов {m}")
    if np.any(w < 0):
        raise ValidationError("веса должны быть неотрицательными")
    return w


def _degenerate(prec, layer, what):
    bad = np.flatnonzero(~(np.asarray(prec).reshape(-1) > 0))
    if bad.size:
        neuron = int(bad[0]) if np.ndim(prec) > 0 else None
        raise DegenerateProductError(f"вырожденное произведение: {what}", layer=layer,
                                     neuron=neuron)


# ---------------------------------------------------------------------------
# Ядра над массивами. W имеет форму (..., m), результат вычисляется по строкам W.
# ---------------------------------------------------------------------------

def product_univariate(mu, var, W, layer=None):
    """
    Одномерное PoG для каждой строки W

    Args:
        mu (np.ndarray): Средние входов (m,)
        var (np.ndarray): Дисперсии входов (m,)
        W (np.ndarray): Веса (..., m)

    Returns:
        tuple: (means (...), variances (...))
    """
    omega = W / var
    prec = omega.sum(axis=-1)
    _degenerate(prec, layer, "сумма w/σ² равна нулю")
    coef = omega / prec[..., None]
    return coef @ mu, 1.0 / prec


def product_isotropic(mu, tau, W, layer=None):
    """
    Изотропное PoG: τ_out = Σ wτ, μ_out = Σ (wτ/τ_out) μ

    Args:
        mu (np.ndarray): Средние входов (m, D)
        tau (np.ndarray): Точности входов (m,)
        W (np.ndarray): Веса (..., m)

    Returns:
        tuple: (means (..., D), precisions (...))
    """
    omega = W * tau
    prec = omega.sum(axis=-1)
    _degenerate(prec, layer, "сумма wτ равна нулю")
    coef = omega / prec[..., None]
    return coef @ mu, prec


def product_full(mu, P, W, layer=None):
    """
    PoG с полными матрицами точности: P_out = Σ w P, μ_out = P_out⁻¹ Σ w P μ

    Args:
        mu (np.ndarray): Средние входов (m, D)
        P (np.ndarray): Матрицы точности входов (m, D, D)
        W (np.ndarray): Веса (K, m) или (m,)

    Returns:
        tuple: (means (K, D), precision matrices (K, D, D))
    """
    single = W.ndim == 1
    W2 = np.atleast_2d(W)
    P_out = np.einsum('km,mij->kij', W2, P)
    scale = np.abs(P_out).max(axis=(-2, -1))
    eig_min = np.linalg.eigvalsh(P_out).min(axis=-1)
    # сингулярность относительно масштаба матрицы
    well_posed = (scale > 0) & (eig_min > 1e-12 * scale)
    _degenerate(well_posed.astype(float) if not single else float(well_posed[0]), layer,
                "суммарная матрица точности сингулярна")
    h = np.einsum('km,mij,mj->ki', W2, P, mu)
    means = np.linalg.solve(P_out, h[..., None])[..., 0]
    if single:
        return means[0], P_out[0]
    return means, P_out


def product(form, mu, unc, W, layer=None):
    """Диспетчер ядер произведения по виду экспертов"""
    if form == UNIVARIATE:
        return product_univariate(mu, unc, W, layer)
    if form == ISOTROPIC:
        return product_isotropic(mu, unc, W, layer)
    return product_full(mu, unc, W, layer)


def scalar_precision(form, unc):
    """
    Скалярная точность эксперта, используемая ограничениями на дисперсию

    Для полного вида берётся средняя диагональная точность tr(P)/D.
    """
    if form == UNIVARIATE:
        return 1.0 / unc
    if form == ISOTROPIC:
        return unc
    return np.trace(unc, axis1=-2, axis2=-1) / unc.shape[-1]


def clip_variance(form, unc, sigma2_min):
    """
    Ограничивает дисперсию выходов снизу значением sigma2_min

    Для полного вида обрезаются собственные значения матрицы точности
    сверху на 1/sigma2_min.

    Args:
        form (str): Вид экспертов
        unc (np.ndarray): Дисперсии / точности / матрицы точности (K, ...)
        sigma2_min (float): Нижняя граница дисперсии

    Returns:
        np.ndarray: Ограниченные неопределённости той же формы
    """
    cap = 1.0 / sigma2_min
    if form == UNIVARIATE:
        return np.maximum(unc, sigma2_min)
    if form == ISOTROPIC:
        return np.minimum(unc, cap)
    eig, vec = np.linalg.eigh(unc)
    if eig.max() <= cap:
        return unc
    clipped = np.einsum('...ij,...j,...kj->...ik', vec, np.minimum(eig, cap), vec)
    return 0.5 * (clipped + np.swapaxes(clipped, -1, -2))


def nll(form, y, mean, unc):
    """
    Точная отрицательная лог-плотность −log N(y; mean, ·) с константой ½log(2π)

    Args:
        form (str): Вид экспертов
        y: Цель (скаляр или D-вектор)
        mean: Средние (...) или (..., D)
        unc: Дисперсии / точности / матрицы точности выходов

    Returns:
        np.ndarray: Значения потерь (...)
    """
    if form == UNIVARIATE:
        return 0.5 * (LOG_2PI + np.log(unc) + (y - mean) ** 2 / unc)
    e = y - mean
    D = e.shape[-1]
    if form == ISOTROPIC:
        return 0.5 * (D * LOG_2PI - D * np.log(unc) + unc * np.sum(e * e, axis=-1))
    _, logdet = np.linalg.slogdet(unc)
    quad = np.einsum('...i,...ij,...j->...', e, unc, e)
    return 0.5 * (D * LOG_2PI - logdet + quad)


def nll_gradient_kernel(form, y, mu, unc, out_mean, out_unc):
    """
    Градиент точной NLL по весам для каждой строки

    Args:
        form (str): Вид экспертов
        y: Цель
        mu, unc: Входные эксперты (m,) / (m, D) / (m, D, D)
        out_mean, out_unc: Выходы произведения для K строк

    Returns:
        np.ndarray: Градиенты (K, m)
    """
    if form == UNIVARIATE:
        M = np.atleast_1d(out_mean)[:, None]
        V = np.atleast_1d(out_unc)[:, None]
        return 0.5 * ((y - M) * (y + M - 2.0 * mu[None, :]) - V) / unc[None, :]
    M = np.atleast_2d(out_mean)
    e = y - M
    D = e.shape[-1]
    diff = mu[None, :, :] - M[:, None, :]
    if form == ISOTROPIC:
        T = np.atleast_1d(out_unc)[:, None]
        sq = 0.5 * np.sum(e * e, axis=-1)[:, None]
        cross = np.einsum('kd,kmd->km', e, diff)
        return unc[None, :] * (-D / (2.0 * T) + sq - cross)
    P_out = out_unc if out_unc.ndim == 3 else out_unc[None]
    cov = np.linalg.inv(P_out)
    trace_term = -0.5 * np.einsum('kij,mji->km', cov, unc)
    quad_term = 0.5 * np.einsum('ki,mij,kj->km', e, unc, e)
    cross = np.einsum('ki,mij,kmj->km', e, unc, diff)
    return trace_term + quad_term - cross


# ---------------------------------------------------------------------------
# Публичные операции над экспертами
# ---------------------------------------------------------------------------

def pog_univariate(experts, w):
    """
    Взвешенное произведение одномерных гауссиан

    Args:
        experts (list): Список UnivariateGaussian
        w (array-like): Неотрицательные веса

    Returns:
        UnivariateGaussian: N(μ_PoG, σ²_PoG)
    """
    form, mu, var = stack_experts(experts)
    if form != UNIVARIATE:
        raise ValidationError(f"pog_univariate ожидает одномерных экспертов, получено {form}")
    mean, variance = product_univariate(mu, var, as_weights(w, len(experts)))
    return UnivariateGaussian(mean, variance)


def pog_isotropic(experts, w):
    """
    Взвешенное произведение изотропных гауссиан

    Returns:
        IsotropicGaussian: (μ_out, τ_out)
    """
    form, mu, tau = stack_experts(experts)
    if form != ISOTROPIC:
        raise ValidationError(f"pog_isotropic ожидает изотропных экспертов, получено {form}")
    mean, prec = product_isotropic(mu, tau, as_weights(w, len(experts)))
    return IsotropicGaussian(mean, prec)


def pog_full(experts, w):
    """
    Взвешенное произведение гауссиан с полными матрицами точности

    Returns:
        FullGaussian: (μ_out, Σ_out⁻¹)
    """
    form, mu, P = stack_experts(experts)
    if form != FULL:
        raise ValidationError(f"pog_full ожидает экспертов с полной точностью, получено {form}")
    mean, prec = product_full(mu, P, as_weights(w, len(experts)))
    return FullGaussian(mean, 0.5 * (prec + prec.T))


def pog(experts, w):
    """Произведение экспертов любого (но единого) вида"""
    form, _ = expert_form(experts)
    if form == UNIVARIATE:
        return pog_univariate(experts, w)
    if form == ISOTROPIC:
        return pog_isotropic(experts, w)
    return pog_full(experts, w)


@dataclass(frozen=True, eq=False)
class LossEvalPoint:
    """Точка вычисления потерь нейрона: цель, эксперты и веса"""
    y: object
    experts: list
    weights: np.ndarray

    def __post_init__(self):
        form, dim = expert_form(self.experts)
        y = _finite(self.y, 'y')
        if form == UNIVARIATE:
            if y.size != 1:
                raise ValidationError("для одномерных экспертов цель должна быть скаляром")
            y = float(y)
        elif y.shape != (dim,):
            raise ValidationError(f"цель формы {y.shape}, ожидается ({dim},)")
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'experts', list(self.experts))
        object.__setattr__(self, 'weights', as_weights(self.weights, len(self.experts)))


def nll_loss(p):
    """
    Точная NLL нейрона −log N(y; μ_PoG(w), σ²_PoG(w))

    Args:
        p (LossEvalPoint): Точка вычисления

    Returns:
        float: Значение потерь
    """
    form, mu, unc = stack_experts(p.experts)
    mean, out = product(form, mu, unc, p.weights)
    return float(nll(form, p.y, mean, out))


def nll_gradient(p):
    """
    Градиент точной NLL по весам w

    Равен половине градиента редуцированной функции потерь
    log σ² + (y − μ)²/σ².

    Args:
        p (LossEvalPoint): Точка вычисления

    Returns:
        np.ndarray: Вектор (m,)
    """
    form, mu, unc = stack_experts(p.experts)
    mean, out = product(form, mu, unc, p.weights)
    return nll_gradient_kernel(form, p.y, mu, unc, mean, out)[0]


def reduced_loss(y, experts, w):
    """Редуцированная потеря log σ²_PoG + (y − μ_PoG)²/σ²_PoG (одномерный случай)"""
    out = pog_univariate(experts, w)
    return math.log(out.variance) + (y - out.mean) ** 2 / out.variance


def reduced_hessian(y, experts, w):
    """
    Гессиан редуцированной потери по w

    В координатах ω_i = w_i/σ_i²:
    ∇²ℓ = ‖ω‖⁻²·𝟙 + 2‖ω‖⁻¹(μ − g𝟙)(μ − g𝟙)ᵀ, g = ωᵀμ/‖ω‖,
    затем переводится в w как diag(1/σ²)·H_ω·diag(1/σ²).
    От y гессиан не зависит; аргумент оставлен для единообразия.

    Args:
        y (float): Цель
        experts (list): Одномерные эксперты
        w (array-like): Строго положительные веса

    Returns:
        np.ndarray: Матрица (m, m)
    """
    _finite(y, 'y')
    form, mu, var = stack_experts(experts)
    if form != UNIVARIATE:
        raise ValidationError("reduced_hessian определён только для одномерных экспертов")
    w = as_weights(w, len(experts))
    if np.any(w <= 0):
        raise ValidationError("reduced_hessian требует строго положительных весов")
    omega = w / var
    norm = omega.sum()
    a = mu - omega @ mu / norm
    h_omega = np.full((mu.size, mu.size), norm ** -2) + (2.0 / norm) * np.outer(a, a)
    scale = 1.0 / var
    return scale[:, None] * h_omega * scale[None, :]


def density(expert, y):
    """Плотность эксперта в точке y"""
    form, mu, unc = stack_experts([expert])
    y = float(y) if form == UNIVARIATE else np.asarray(y, dtype=float)
    return float(np.exp(-nll(form, y, mu[0], unc[0])))
