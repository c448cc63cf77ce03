"""
Оценка плотности через шумоподавление: сеть G-GLN учится убирать
изотропный гауссов шум, откуда получается поле градиента log p(x),
итеративное шумоподавление и дорисовка изображений, а также HMC.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

import pog
from base_models import identity_expert
from constraints import ConstraintSet
from data import (SWISS_T_MAX, SWISS_T_MIN, epoch_order, fit_noisy_scaler, gen_swiss_roll,
                  load_idx_images, scale_images, swiss_roll_curve)
from errors import ValidationError
from network import AGG_TOP, NetworkConfig, build_network, forward, infer, learn_from_trace

logger = logging.getLogger("GGLN.Denoising")


@dataclass(frozen=True)
class DenoiserConfig:
    """
    Параметры шумоподавления

    Args:
        lam (float): Дисперсия шума λ
        step (float): Длина шага интерполяции при дорисовке
        keep_unmasked (bool): Возвращать ли пиксели вне маски к исходным значениям
        base_variance (float): Дисперсия базового эксперта N(x̃, σ²I)
        epochs (int): Число проходов по данным при обучении
        fixed_noise (bool): Один шумовой паттерн на пример или новый шум при каждом показе
    """
    lam: float = 0.01
    step: float = 0.002
    keep_unmasked: bool = True
    base_variance: float = 0.3
    epochs: int = 1
    fixed_noise: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"λ должна быть > 0, получено {self.lam}")
        if not 0 < self.step <= 1:
            raise ValidationError(f"step должен лежать в (0, 1], получено {self.step}")
        if not self.base_variance > 0:
            raise ValidationError(f"base_variance должна быть > 0, получено {self.base_variance}")
        if self.epochs < 1:
            raise ValidationError(f"epochs должно быть >= 1, получено {self.epochs}")


@dataclass(frozen=True)
class HMCConfig:
    """Параметры HMC: число шагов, подшагов leapfrog, ε и масса частицы"""
    steps: int = 15000
    substeps: int = 150
    epsilon: float = 0.003
    mass: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.substeps < 1:
            raise ValidationError("steps и substeps должны быть >= 1")
        if not (self.epsilon > 0 and self.mass > 0):
            raise ValidationError("epsilon и mass должны быть > 0")


class Denoiser:
    """
    μ(x): среднее верхнего нейрона сети, обученной на шумоподавлении

    Args:
        net (Network): Сеть изотропного или полного вида
        base_variance (float): Дисперсия базового эксперта
    """

    def __init__(self, net, base_variance=0.3):
        self.net = net
        self.base_variance = base_variance

    def _base(self, x):
        form = self.net.cfg.form
        if form == pog.ISOTROPIC:
            return x[None, :], np.array([1.0 / self.base_variance])
        return x[None, :], (np.eye(x.size) / self.base_variance)[None, :, :]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.stack([self(row) for row in x])
        mu, unc = self._base(x)
        return forward(self.net, mu, unc, x).layers[-1].out_mean[0]

    def expert(self, x):
        """Выходной эксперт сети через публичный вывод"""
        x = np.asarray(x, dtype=float)
        return infer(self.net, [identity_expert(x, self.base_variance, self.net.cfg.form)], x)

    def learn(self, noisy, clean):
        mu, unc = self._base(noisy)
        learn_from_trace(self.net, forward(self.net, mu, unc, noisy), clean)


def make_denoiser_network(dc, D, rng):
    """
    Сеть для шумоподавления: изотропные эксперты, один базовый эксперт,
    верхний нейрон на выходе, без лог-барьеров. Минимальная дисперсия
    держится клиппингом при выводе, веса по ней не проецируются

    Args:
        dc (DenoiseConfig): Конфигурация команды denoise
        D (int): Размерность данных
        rng (np.random.Generator): Генератор

    Returns:
        Network: Новая сеть
    """
    constraints = ConstraintSet(w_max=dc.w_max, sigma2_min=dc.sigma2_min, sigma2_max=dc.sigma2_max,
                                use_barrier=False, clip_variance=True)
    cfg = NetworkConfig(layer_sizes=dc.layer_sizes, context_dim=dc.context_dim,
                        learning_rate=dc.learning_rate, side_dim=D, base_count=1, target_dim=D,
                        form=pog.ISOTROPIC, bias_r=dc.bias_r if dc.bias_experts else None,
                        sigma2_bias=dc.sigma2_bias, bias_scale=dc.bias_scale,
                        constraints=constraints, aggregation=AGG_TOP)
    return build_network(cfg, rng)


def train_denoiser(net, data, cfg, rng, base_variance=None):
    """
    Обучение шумоподавлению: x̃ = x + ξ, ξ ~ N(0, λI); side information x̃,
    цель x

    Args:
        net (Network): Сеть (изменяется на месте)
        data (np.ndarray): Чистые точки (N, D)
        cfg (DenoiserConfig): Параметры
        rng (np.random.Generator): Генератор
        base_variance (float): Дисперсия базового эксперта (по умолчанию из cfg)

    Returns:
        Network: Обученная сеть
    """
    data = np.asarray(data, dtype=float)
    denoiser = Denoiser(net, cfg.base_variance if base_variance is None else base_variance)
    std = np.sqrt(cfg.lam)
    patterns = std * rng.standard_normal(data.shape) if cfg.fixed_noise else None
    for epoch in range(cfg.epochs):
        for i in epoch_order(len(data), rng):
            noise = patterns[i] if patterns is not None else std * rng.standard_normal(data.shape[1])
            denoiser.learn(data[i] + noise, data[i])
        logger.debug(f"Шумоподавление: проход {epoch + 1}/{cfg.epochs} завершён")
    return net


def score_field(denoiser, x, lam):
    """
    Оценка ∇ₓ log p(x) = (μ(x) − x)/λ

    Args:
        denoiser (callable): μ(x), например Denoiser
        x (np.ndarray): Точка (D,) или набор точек (N, D)
        lam (float): Дисперсия шума, на которой обучалась сеть

    Returns:
        np.ndarray: Поле градиента той же формы, что x
    """
    if not lam > 0:
        raise ValidationError(f"λ должна быть > 0, получено {lam}")
    x = np.asarray(x, dtype=float)
    return (denoiser(x) - x) / lam


def denoise_steps(denoiser, x0, n_steps, cfg, mask=None):
    """
    Итеративное шумоподавление x → μ(x) → μ(μ(x)) ...

    С маской (True: дорисовываемые координаты) делается шаг интерполяции
    x + step·(μ(x) − x), после чего координаты вне маски возвращаются к
    значениям x0.

    Returns:
        np.ndarray: Траектория (n_steps + 1, ...) начиная с x0
    """
    if n_steps < 0:
        raise ValidationError(f"n_steps должно быть >= 0, получено {n_steps}")
    x0 = np.asarray(x0, dtype=float)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x0.shape)
    trajectory = [x0.copy()]
    x = x0.copy()
    for _ in range(n_steps):
        if mask is None:
            x = np.asarray(denoiser(x), dtype=float)
        else:
            x = x + cfg.step * (denoiser(x) - x)
            if cfg.keep_unmasked:
                x = np.where(mask, x, x0)
        trajectory.append(x.copy())
    return np.stack(trajectory)


def leapfrog(score_fn, q, p, epsilon, substeps, mass=1.0):
    """
    Интегратор leapfrog для потенциала U = −log p; сила равна score_fn

    Returns:
        tuple: (q, p) после substeps подшагов
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    p = p + 0.5 * epsilon * score_fn(q)
    for k in range(substeps):
        q = q + epsilon * p / mass
        if k < substeps - 1:
            p = p + epsilon * score_fn(q)
    p = p + 0.5 * epsilon * score_fn(q)
    return q, p


def hmc_sample(score_fn, x0, cfg, rng):
    """
    HMC без критерия принятия: на каждом шаге импульс сэмплируется из
    N(0, mass·I), затем substeps подшагов leapfrog

    Args:
        score_fn (callable): ∇ₓ log p(x)
        x0 (np.ndarray): Начальная точка (D,)
        cfg (HMCConfig): Параметры
        rng (np.random.Generator): Генератор

    Returns:
        np.ndarray: Положения после каждого шага (steps, D)
    """
    q = np.asarray(x0, dtype=float).copy()
    samples = np.empty((cfg.steps, q.size))
    for i in range(cfg.steps):
        p = np.sqrt(cfg.mass) * rng.standard_normal(q.size)
        q, _ = leapfrog(score_fn, q, p, cfg.epsilon, cfg.substeps, cfg.mass)
        samples[i] = q
    return samples


def make_grid(size, low=-1.0, high=1.0):
    """Равномерная сетка size×size точек на квадрате"""
    axis = np.linspace(low, high, size)
    xx, yy = np.meshgrid(axis, axis)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def manifold_distance(points, samples=20000):
    """Расстояние от каждой точки до кривой рулета (по плотной выборке кривой)"""
    curve = swiss_roll_curve(np.linspace(SWISS_T_MIN, SWISS_T_MAX, samples))
    distances, _ = cKDTree(curve).query(np.asarray(points, dtype=float))
    return distances


def random_square_mask(side, size, rng):
    """Квадратная маска size×size в случайном месте изображения side×side"""
    mask = np.zeros((side, side), dtype=bool)
    r, c = rng.integers(0, side - size + 1, size=2)
    mask[r:r + size, c:c + size] = True
    return mask.ravel()


def _vector(v):
    return [float(x) for x in np.asarray(v).ravel()]


def run_swiss_roll(dc, seed):
    """
    Рулет: обучение, шумоподавление сетки и HMC по выученному полю

    Returns:
        tuple: (сводка, записи для JSON-lines)
    """
    rng = np.random.default_rng(seed)
    data = gen_swiss_roll(dc.n_train, dc.data_noise, seed).targets
    net = make_denoiser_network(dc, 2, rng)
    cfg = DenoiserConfig(lam=dc.lam, step=dc.infill_step, base_variance=dc.base_variance,
                         epochs=dc.epochs, fixed_noise=dc.fixed_noise)
    train_denoiser(net, data, cfg, rng)
    denoiser = Denoiser(net, dc.base_variance)

    grid = make_grid(dc.grid_size)
    trajectory = denoise_steps(denoiser, grid, dc.denoise_steps, cfg)
    initial = float(manifold_distance(trajectory[0]).mean())
    final = float(manifold_distance(trajectory[-1]).mean())
    logger.info(f"Рулет, зерно {seed}: расстояние до многообразия {initial:.4f} → {final:.4f}")

    hmc = HMCConfig(dc.hmc_steps, dc.hmc_substeps, dc.hmc_epsilon, dc.hmc_mass)
    samples = hmc_sample(lambda x: score_field(denoiser, x, dc.lam), data[0], hmc, rng)

    records = [{'kind': 'trajectory', 'seed': seed, 'step': k, 'points': [_vector(p) for p in points]}
               for k, points in enumerate(trajectory)]
    records += [{'kind': 'sample', 'seed': seed, 'step': k, 'x': _vector(s)} for k, s in enumerate(samples)]
    summary = {'seed': seed, 'initial_distance': initial, 'final_distance': final,
               'reduction': initial / final if final > 0 else float('inf')}
    return summary, records


def run_images(dc, seed):
    """
    Изображения IDX: нормализатор по зашумлённым изображениям, обучение
    шумоподавлению и дорисовка случайных квадратных масок

    Returns:
        tuple: (сводка, записи для JSON-lines)
    """
    rng = np.random.default_rng(seed)
    images = load_idx_images(dc.dataset)
    scaler = fit_noisy_scaler(images.features, rng, dc.scaler_noise, dc.scaler_count)
    train = scale_images(images, scaler)
    data = train.targets[:dc.n_train]
    D = data.shape[1]
    side = int(round(np.sqrt(D)))
    if side * side != D or dc.mask_size > side:
        raise ValidationError(f"изображения должны быть квадратными и больше маски, D={D}")

    net = make_denoiser_network(dc, D, rng)
    cfg = DenoiserConfig(lam=dc.lam, step=dc.infill_step, base_variance=dc.base_variance,
                         epochs=dc.epochs, fixed_noise=dc.fixed_noise)
    train_denoiser(net, data, cfg, rng)
    denoiser = Denoiser(net, dc.base_variance)

    targets = scale_images(load_idx_images(dc.test_dataset), scaler).targets if dc.test_dataset else data
    records = []
    errors = []
    for k in range(min(dc.infill_count, len(targets))):
        original = targets[k]
        mask = random_square_mask(side, dc.mask_size, rng)
        masked = np.where(mask, 0.0, original)
        filled = denoise_steps(denoiser, masked, dc.infill_steps, cfg, mask)[-1]
        errors.append(float(np.sqrt(np.mean((filled[mask] - original[mask]) ** 2))))
        records.append({'kind': 'infill', 'seed': seed, 'image': k,
                        'original': _vector(scaler.inverse_transform(original[None])[0]),
                        'masked': _vector(scaler.inverse_transform(masked[None])[0]),
                        'filled': _vector(scaler.inverse_transform(filled[None])[0])})
    logger.info(f"Дорисовка, зерно {seed}: средний RMSE в маске {np.mean(errors):.4f}")
    return {'seed': seed, 'infill_rmse': errors}, records


def run_denoise_seed(dc, seed):
    """Прогон одного зерна команды denoise"""
    if dc.dataset == 'swiss_roll':
        return run_swiss_roll(dc, seed)
    return run_images(dc, seed)


def write_jsonl(records, path):
    """Записывает записи по одной JSON-строке"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        for record in records:
            fh.write(json.dumps(record) + '\n')
    logger.info(f"Записано {len(records)} строк в {path}")
    return path
