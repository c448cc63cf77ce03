"""
Сеть G-GLN: сборка слоёв нейронов, вывод с необязательным обновлением,
switching-агрегация и бинарные снимки сети.

Каждый нейрон слоя i получает все K_{i-1} выходов предыдущего слоя и
bias-экспертов (они повторно подаются на каждый слой). Порядок входов:
сначала выходы предыдущего слоя (или базовые эксперты для слоя 1),
затем bias-эксперты.
"""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

import pog
from base_models import bias_experts
from constraints import ConstraintSet, backstop_rows, barrier_terms
from errors import DataFormatError, ValidationError, ZeroDensityError
from gating import LayerGating

logger = logging.getLogger("GGLN.Network")

AGG_TOP = 'top'
AGG_SWITCHING = 'switching'
AGGREGATIONS = (AGG_TOP, AGG_SWITCHING)

SNAPSHOT_MAGIC = b'GGLN'
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """
    Параметры сети

    Args:
        layer_sizes (tuple): Число нейронов в слоях K_1..K_L
        context_dim (int): Размерность контекста s (2^s строк весов на нейрон)
        learning_rate (float): Скорость обучения η
        side_dim (int): Размерность side information d
        base_count (int): Число базовых экспертов нулевого слоя (без bias)
        target_dim (int): Размерность цели D
        form (str): Вид экспертов (univariate, isotropic, full)
        bias_r (float): Полуширина диапазона bias-экспертов (None: без bias)
        sigma2_bias (float): Дисперсия bias-экспертов
        bias_scale (float): Масштаб смещения полупространств
        constraints (ConstraintSet): Допустимое множество весов
        aggregation (str): top или switching
    """
    layer_sizes: tuple
    context_dim: int
    learning_rate: float
    side_dim: int
    base_count: int
    target_dim: int = 1
    form: str = pog.UNIVARIATE
    bias_r: Optional[float] = 5.0
    sigma2_bias: float = 1.0
    bias_scale: float = 0.05
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    aggregation: str = AGG_SWITCHING

    def __post_init__(self):
        object.__setattr__(self, 'layer_sizes', tuple(int(k) for k in self.layer_sizes))
        if len(self.layer_sizes) < 1 or min(self.layer_sizes) < 1:
            raise ValidationError(f"некорректные размеры слоёв: {self.layer_sizes}")
        if self.context_dim < 1:
            raise ValidationError(f"context_dim должен быть >= 1, получено {self.context_dim}")
        if not 0 < self.learning_rate < 1:
            raise ValidationError(f"learning_rate должен лежать в (0, 1), получено {self.learning_rate}")
        if self.form not in pog.FORMS:
            raise ValidationError(f"неизвестный вид экспертов: {self.form}")
        if (self.target_dim == 1) != (self.form == pog.UNIVARIATE):
            raise ValidationError(f"вид {self.form} несовместим с размерностью цели {self.target_dim}")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"неизвестная агрегация: {self.aggregation}")
        if self.base_count < 0 or self.side_dim < 1:
            raise ValidationError("base_count должен быть >= 0, side_dim >= 1")
        if self.base_count == 0 and self.bias_r is None:
            raise ValidationError("у первого слоя нет входов: нет ни базовых, ни bias-экспертов")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['constraints'] = ConstraintSet(**data['constraints'])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class NeuronState:
    """Матрица весов (k, m) нейрона и его контекстная функция"""
    weights: np.ndarray
    context: object


@dataclass(frozen=True, eq=False)
class SwitchingState:
    """Веса switching-агрегации (сумма 1) и номер шага t"""
    weights: np.ndarray
    t: int = 1

    @classmethod
    def initial(cls, m):
        return cls(np.full(m, 1.0 / m), 1)


class NeuronLayer:
    """
    Слой нейронов: гейтинг и ленивое хранилище строк весов

    Строка весов выделяется при первой записи в ячейку контекста;
    нетронутые ячейки читают начальную строку.

    Args:
        gating (LayerGating): Контексты нейронов слоя
        fan_in (int): Число входов нейрона m
        init_weight (float): Начальное значение весов
    """

    def __init__(self, gating, fan_in, init_weight):
        self.gating = gating
        self.neurons = gating.normals.shape[0]
        self.cells = 2 ** gating.size
        self.fan_in = fan_in
        self.init_row = np.full(fan_in, init_weight)
        self.slots = np.full((self.neurons, self.cells), -1, dtype=np.int64)
        self.pool = np.empty((max(self.neurons, 16), fan_in))
        self.used = 0

    def _allocate(self, count):
        if self.used + count > self.pool.shape[0]:
            capacity = max(2 * self.pool.shape[0], self.used + count)
            pool = np.empty((capacity, self.fan_in))
            pool[:self.used] = self.pool[:self.used]
            self.pool = pool
        start = self.used
        self.used += count
        return np.arange(start, start + count)

    def active_rows(self, indices):
        """Копии активных строк весов (K, m)"""
        slots = self.slots[np.arange(self.neurons), indices]
        rows = np.broadcast_to(self.init_row, (self.neurons, self.fan_in)).copy()
        touched = slots >= 0
        rows[touched] = self.pool[slots[touched]]
        return rows

    def write_rows(self, indices, rows, neurons=None):
        """Записывает строки весов для выбранных ячеек"""
        neurons = np.arange(self.neurons) if neurons is None else neurons
        slots = self.slots[neurons, indices]
        fresh = slots < 0
        if np.any(fresh):
            slots[fresh] = self._allocate(int(fresh.sum()))
            self.slots[neurons[fresh], indices[fresh]] = slots[fresh]
        self.pool[slots] = rows

    def weights(self, k):
        """Плотная матрица весов нейрона k (cells, m)"""
        matrix = np.broadcast_to(self.init_row, (self.cells, self.fan_in)).copy()
        touched = self.slots[k] >= 0
        matrix[touched] = self.pool[self.slots[k][touched]]
        return matrix

    def set_weights(self, k, matrix):
        """Записывает плотную матрицу весов нейрона k; строки, равные начальной, не выделяются"""
        matrix = np.asarray(matrix, dtype=float)
        differs = np.flatnonzero(np.any(matrix != self.init_row, axis=1) | (self.slots[k] >= 0))
        if differs.size:
            self.write_rows(differs, matrix[differs], np.full(differs.size, k))


class Network:
    """
    G-GLN: конфигурация, слои, bias-эксперты и состояние switching-агрегации

    Args:
        cfg (NetworkConfig): Конфигурация
        layers (list): Слои NeuronLayer
    """

    def __init__(self, cfg, layers):
        self.cfg = cfg
        self.layers = layers
        if cfg.bias_r is None:
            self.bias = None
        else:
            _, mu, unc = pog.stack_experts(
                bias_experts(cfg.bias_r, cfg.target_dim, cfg.sigma2_bias, cfg.form))
            self.bias = (mu, unc)
        self.switching = SwitchingState.initial(self.neuron_count)

    @property
    def neuron_count(self):
        return sum(layer.neurons for layer in self.layers)

    @property
    def bias_count(self):
        return 0 if self.bias is None else len(self.bias[0])

    def neuron(self, i, k):
        """
        Состояние нейрона k слоя i (нумерация слоёв с 1)

        Returns:
            NeuronState: Копия весов и контекст
        """
        layer = self.layers[i - 1]
        return NeuronState(layer.weights(k), layer.gating.composed(k))

    def set_neuron_weights(self, i, k, matrix):
        layer = self.layers[i - 1]
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (layer.cells, layer.fan_in):
            raise ValidationError(f"ожидается матрица {(layer.cells, layer.fan_in)}, получено {matrix.shape}")
        layer.set_weights(k, matrix)


def build_network(cfg, rng):
    """
    Строит сеть: контексты сэмплируются слой за слоем, все веса слоя i
    равны 1/K_{i-1} (K_0: число базовых экспертов; bias не учитывается)

    Args:
        cfg (NetworkConfig): Конфигурация
        rng (np.random.Generator): Генератор случайных чисел

    Returns:
        Network: Новая сеть
    """
    n_bias = 0 if cfg.bias_r is None else (2 if cfg.target_dim == 1 else 2 * cfg.target_dim)
    layers = []
    previous = cfg.base_count
    for size in cfg.layer_sizes:
        gating = LayerGating.sample(size, cfg.side_dim, cfg.context_dim, cfg.bias_scale, rng)
        init = 1.0 / previous if previous > 0 else 1.0 / n_bias
        layers.append(NeuronLayer(gating, previous + n_bias, init))
        previous = size
    logger.debug(f"Построена сеть {cfg.layer_sizes}, s={cfg.context_dim}, вид {cfg.form}")
    return Network(cfg, layers)


@dataclass(eq=False)
class LayerTrace:
    """
    Записанный проход одного слоя: активные ячейки, веса, входы и выходы

    out_unc: неопределённость произведения как есть (по ней считается
    градиент), pred_unc: она же после клиппинга дисперсии при выводе
    (её видят следующий слой и предсказание)
    """
    indices: np.ndarray
    weights: np.ndarray
    in_mean: np.ndarray
    in_unc: np.ndarray
    out_mean: np.ndarray
    out_unc: np.ndarray
    pred_unc: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.pred_unc is None:
            self.pred_unc = self.out_unc


class ForwardTrace:
    """Результат прямого прохода по всем слоям"""

    def __init__(self, form, layers):
        self.form = form
        self.layers = layers

    def outputs(self):
        """Средние и неопределённости всех нейронов сети в порядке объявления"""
        return (np.concatenate([t.out_mean for t in self.layers]),
                np.concatenate([t.pred_unc for t in self.layers]))

    def layer_nll(self, y):
        """NLL каждого нейрона, по слоям"""
        return [pog.nll(self.form, y, t.out_mean, t.pred_unc) for t in self.layers]

    def neuron_expert(self, i, k):
        """Выход нейрона k слоя i как эксперт"""
        t = self.layers[i - 1]
        return pog.unstack_expert(self.form, t.out_mean[k], t.pred_unc[k])


def _concat(form, mu, unc, bias):
    if bias is None:
        return mu, unc
    return np.concatenate([mu, bias[0]]), np.concatenate([unc, bias[1]])


def _base_arrays(net, base_experts):
    if len(base_experts) != net.cfg.base_count:
        raise ValidationError(f"ожидается {net.cfg.base_count} базовых экспертов, получено {len(base_experts)}")
    if not base_experts:
        D = net.cfg.target_dim
        if net.cfg.form == pog.UNIVARIATE:
            return np.empty(0), np.empty(0)
        if net.cfg.form == pog.ISOTROPIC:
            return np.empty((0, D)), np.empty(0)
        return np.empty((0, D)), np.empty((0, D, D))
    form, mu, unc = pog.stack_experts(base_experts)
    if form != net.cfg.form:
        raise ValidationError(f"базовые эксперты вида {form}, сеть ожидает {net.cfg.form}")
    return mu, unc


def forward(net, base_mu, base_unc, z):
    """
    Прямой проход по массивам базовых экспертов

    Args:
        net (Network): Сеть
        base_mu, base_unc: Базовые эксперты в виде массивов
        z (np.ndarray): Side information

    Returns:
        ForwardTrace: Записанные входы и выходы всех слоёв
    """
    form = net.cfg.form
    cs = net.cfg.constraints
    mu, unc = base_mu, base_unc
    traces = []
    for i, layer in enumerate(net.layers, start=1):
        in_mu, in_unc = _concat(form, mu, unc, net.bias)
        indices = layer.gating.indices(z)
        W = layer.active_rows(indices)
        mu, raw = pog.product(form, in_mu, in_unc, W, layer=i)
        unc = pog.clip_variance(form, raw, cs.sigma2_min) if cs.clip_variance else raw
        traces.append(LayerTrace(indices, W, in_mu, in_unc, mu, raw, unc))
    return ForwardTrace(form, traces)


def _mixture_moments(form, means, uncs, weights):
    """Гауссиана с моментами смеси Σ w_i N(μ_i, ·)"""
    mean = weights @ means
    if form == pog.UNIVARIATE:
        return pog.UnivariateGaussian(mean, weights @ (uncs + (means - mean) ** 2))
    diff = means - mean
    if form == pog.ISOTROPIC:
        D = means.shape[1]
        variance = weights @ (1.0 / uncs) + weights @ np.sum(diff * diff, axis=1) / D
        return pog.IsotropicGaussian(mean, 1.0 / variance)
    cov = np.einsum('n,nij->ij', weights, np.linalg.inv(uncs)) + np.einsum('n,ni,nj->ij', weights, diff, diff)
    precision = np.linalg.inv(cov)
    return pog.FullGaussian(mean, 0.5 * (precision + precision.T))


def aggregate(net, trace):
    """
    Выходная плотность сети: верхний нейрон или моменты switching-смеси

    Returns:
        GaussianExpert: Агрегированный эксперт
    """
    if net.cfg.aggregation == AGG_TOP:
        return trace.neuron_expert(len(net.layers), 0)
    means, uncs = trace.outputs()
    return _mixture_moments(net.cfg.form, means, uncs, net.switching.weights)


def log_density(net, trace, y):
    """Логарифм выходной плотности сети в точке y"""
    form = net.cfg.form
    if net.cfg.aggregation == AGG_TOP:
        last = trace.layers[-1]
        return float(-pog.nll(form, y, last.out_mean[0], last.pred_unc[0]))
    means, uncs = trace.outputs()
    with np.errstate(divide='ignore'):
        return float(logsumexp(np.log(net.switching.weights) - pog.nll(form, y, means, uncs)))


def _target(net, y):
    if net.cfg.form == pog.UNIVARIATE:
        y = float(y)
        if not math.isfinite(y):
            raise ValidationError(f"цель должна быть конечной: {y}")
        return y
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != net.cfg.target_dim or not np.all(np.isfinite(y)):
        raise ValidationError(f"цель должна быть конечным вектором длины {net.cfg.target_dim}")
    return y


def infer(net, base_experts, z):
    """
    Вывод без обновления весов

    Args:
        net (Network): Сеть
        base_experts (list): Базовые эксперты (bias-эксперты сеть добавляет сама)
        z (np.ndarray): Side information

    Returns:
        GaussianExpert: Агрегированная выходная плотность
    """
    mu, unc = _base_arrays(net, base_experts)
    return aggregate(net, forward(net, mu, unc, z))


def update_from_trace(net, trace, y, eta=None):
    """
    Обновляет активные строки всех нейронов по записанному проходу

    Шаг градиента ℓ + ξΦ, затем страховочная проекция. Все нейроны слоя
    обновляются одновременно: их градиенты зависят только от записанных
    входов.

    Args:
        net (Network): Сеть
        trace (ForwardTrace): Прямой проход до обновления
        y: Цель
        eta (float): Скорость обучения (по умолчанию из конфигурации)
    """
    eta = net.cfg.learning_rate if eta is None else eta
    if eta < 0:
        raise ValidationError(f"скорость обучения должна быть >= 0, получено {eta}")
    if eta == 0:
        return
    cs = net.cfg.constraints
    form = net.cfg.form
    projected = 0
    for layer, t in zip(net.layers, trace.layers):
        grad = pog.nll_gradient_kernel(form, y, t.in_mean, t.in_unc, t.out_mean, t.out_unc)
        if cs.use_barrier:
            _, barrier_grad = barrier_terms(t.weights, form, t.in_mean, t.in_unc, cs, strict=False)
            grad = grad + cs.xi * barrier_grad
        W, moved = backstop_rows(t.weights - eta * grad, form, t.in_unc, cs)
        projected += moved
        layer.write_rows(t.indices, W)
    if projected:
        logger.debug(f"Страховочная проекция точности применена к {projected} строкам")


def switching_step_log(st, log_densities):
    """
    Шаг switching-агрегации по логарифмам плотностей нейронов

    Returns:
        tuple: (log π, новое SwitchingState)
    """
    w = st.weights
    m = w.size
    with np.errstate(divide='ignore'):
        log_joint = np.log(w) + np.asarray(log_densities, dtype=float)
    log_mix = logsumexp(log_joint)
    if not np.isfinite(log_mix):
        raise ZeroDensityError("все нейроны дали нулевую плотность")
    if m == 1:
        return float(log_mix), SwitchingState(np.ones(1), st.t + 1)
    posterior = np.exp(log_joint - log_mix)
    alpha = 1.0 / (st.t + 1)
    new = alpha / (m - 1) + ((1.0 - alpha) - alpha / (m - 1)) * posterior
    new = np.clip(new, 0.0, 1.0)
    new /= new.sum()
    return float(log_mix), SwitchingState(new, st.t + 1)


def switching_step(st, densities):
    """
    Шаг switching-агрегации: π = Σ wᵢρᵢ, затем байесовское отслеживание
    с α_t = 1/t

    Args:
        st (SwitchingState): Текущее состояние
        densities (array-like): Плотности нейронов ρᵢ(y) >= 0

    Returns:
        tuple: (π, новое SwitchingState)
    """
    densities = np.asarray(densities, dtype=float)
    if densities.shape != st.weights.shape:
        raise ValidationError("число плотностей не совпадает с числом весов")
    if np.any(~np.isfinite(densities)) or np.any(densities < 0):
        raise ValidationError("плотности должны быть конечными и неотрицательными")
    pi = float(st.weights @ densities)
    if pi == 0:
        raise ZeroDensityError("все нейроны дали нулевую плотность")
    with np.errstate(divide='ignore'):
        _, new = switching_step_log(st, np.log(densities))
    return pi, new


def learn_from_trace(net, trace, y, eta=None):
    """Обновление switching-весов и весов нейронов по готовому проходу"""
    if net.cfg.aggregation == AGG_SWITCHING:
        means, uncs = trace.outputs()
        _, net.switching = switching_step_log(net.switching, -pog.nll(net.cfg.form, y, means, uncs))
    update_from_trace(net, trace, y, eta)


def infer_update(net, base_experts, z, y, eta=None):
    """
    Вывод с обновлением

    Сначала выполняется полный прямой проход; возвращаемое предсказание
    соответствует весам до обновления. Затем обновляются switching-веса
    и активные строки всех нейронов.

    Args:
        net (Network): Сеть (изменяется на месте)
        base_experts (list): Базовые эксперты
        z (np.ndarray): Side information
        y: Цель
        eta (float): Скорость обучения (по умолчанию из конфигурации)

    Returns:
        tuple: (предсказание до обновления, сеть)
    """
    y = _target(net, y)
    mu, unc = _base_arrays(net, base_experts)
    trace = forward(net, mu, unc, z)
    prediction = aggregate(net, trace)
    learn_from_trace(net, trace, y, eta)
    return prediction, net


def predict_density(net, base_experts, z, y):
    """
    Выходная плотность сети в точке y

    Для агрегации top это N(y; μ, σ²) верхнего нейрона, для switching
    плотность смеси Σ wᵢρᵢ(y).
    """
    y = _target(net, y)
    mu, unc = _base_arrays(net, base_experts)
    return math.exp(log_density(net, forward(net, mu, unc, z), y))


def save_snapshot(net, path):
    """
    Сохраняет сеть в бинарный файл

    Формат: магия b'GGLN', версия (uint32), длина JSON-конфигурации (uint32),
    конфигурация; затем для каждого нейрона в порядке объявления нормали
    (s·d), смещения (s) и матрица весов (k·m); в конце t и веса
    switching-агрегации. Все числа в формате little-endian float64.
    """
    header = json.dumps(net.cfg.to_dict(), sort_keys=True).encode('utf-8')
    with open(path, 'wb') as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack('<II', SNAPSHOT_VERSION, len(header)))
        fh.write(header)
        for layer in net.layers:
            for k in range(layer.neurons):
                fh.write(layer.gating.normals[k].astype('<f8').tobytes())
                fh.write(layer.gating.offsets[k].astype('<f8').tobytes())
                fh.write(layer.weights(k).astype('<f8').tobytes())
        fh.write(struct.pack('<d', float(net.switching.t)))
        fh.write(net.switching.weights.astype('<f8').tobytes())
    logger.info(f"Снимок сети сохранён в {path}")


def _read(fh, count):
    data = fh.read(8 * count)
    if len(data) != 8 * count:
        raise DataFormatError("снимок сети обрезан")
    return np.frombuffer(data, dtype='<f8').astype(float)


def load_snapshot(path):
    """
    Загружает сеть из файла, записанного save_snapshot

    Returns:
        Network: Восстановленная сеть
    """
    with open(path, 'rb') as fh:
        if fh.read(4) != SNAPSHOT_MAGIC:
            raise DataFormatError(f"{path}: не снимок G-GLN")
        head = fh.read(8)
        if len(head) != 8:
            raise DataFormatError(f"{path}: снимок сети обрезан")
        version, length = struct.unpack('<II', head)
        if version != SNAPSHOT_VERSION:
            raise DataFormatError(f"{path}: неподдерживаемая версия снимка {version}")
        cfg = NetworkConfig.from_dict(json.loads(fh.read(length).decode('utf-8')))
        net = build_network(cfg, np.random.default_rng(0))
        s, d = cfg.context_dim, cfg.side_dim
        for layer in net.layers:
            normals = np.empty((layer.neurons, s, d))
            offsets = np.empty((layer.neurons, s))
            for k in range(layer.neurons):
                normals[k] = _read(fh, s * d).reshape(s, d)
                offsets[k] = _read(fh, s)
                layer.set_weights(k, _read(fh, layer.cells * layer.fan_in).reshape(layer.cells, layer.fan_in))
            layer.gating = LayerGating(normals, offsets)
        t = int(_read(fh, 1)[0])
        net.switching = SwitchingState(_read(fh, net.neuron_count), t)
    return net
