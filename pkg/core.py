import logging

import numpy as np

import pog
from base_models import BASE_BLR, BASE_CONSTANT, BASE_FEATURE, BASE_MODELS, BASE_NONE, BLRBank
from constraints import ConstraintSet
from data import epoch_order
from errors import ValidationError
from network import NetworkConfig, aggregate, build_network, forward, learn_from_trace, log_density

logger = logging.getLogger("GGLN.Core")


class GGLNRegressor:
    def __init__(self, d, layer_sizes, context_dim, learning_rate, target_dim=1, form=pog.ISOTROPIC,
                 base_model=BASE_FEATURE, bias_r=5.0, sigma2_bias=1.0, bias_scale=0.05,
                 constraints=None, aggregation='switching', sigma_fixed=1.0, blr_tau=1.0, blr_tau0=1.0,
                 seed=0):
        """
        Онлайн-регрессор G-GLN: базовые эксперты нулевого слоя, сеть и агрегация

        Args:
            d (int): Число признаков (они же side information)
            layer_sizes (tuple): Размеры слоёв
            context_dim (int): Размерность контекста s
            learning_rate (float): Скорость обучения η
            target_dim (int): Размерность цели D
            form (str): Вид экспертов при D >= 2 (isotropic или full)
            base_model (str): none, feature, blr или constant
            bias_r (float): Полуширина диапазона bias-экспертов
            sigma2_bias (float): Дисперсия bias-экспертов
            bias_scale (float): Масштаб смещения полупространств
            constraints (ConstraintSet): Ограничения весов
            aggregation (str): top или switching
            sigma_fixed (float): Ширина экспертов по признакам
            blr_tau, blr_tau0 (float): Точности BLR-моделей
            seed (int): Зерно для сэмплирования контекстов
        """
        if base_model not in BASE_MODELS:
            raise ValidationError(f"неизвестная базовая модель: {base_model}")
        if base_model == BASE_BLR and target_dim != 1:
            raise ValidationError("BLR-эксперты поддерживаются только для одномерной цели")
        self.d = d
        self.target_dim = target_dim
        self.form = pog.UNIVARIATE if target_dim == 1 else form
        self.base_model = base_model
        self.sigma2_fixed = sigma_fixed ** 2
        self.blr = BLRBank(d, blr_tau, blr_tau0) if base_model == BASE_BLR else None

        base_count = {BASE_NONE: 0, BASE_FEATURE: d, BASE_BLR: d, BASE_CONSTANT: 1}[base_model]
        self.cfg = NetworkConfig(
            layer_sizes=tuple(layer_sizes), context_dim=context_dim, learning_rate=learning_rate,
            side_dim=d, base_count=base_count, target_dim=target_dim, form=self.form,
            bias_r=bias_r, sigma2_bias=sigma2_bias, bias_scale=bias_scale,
            constraints=constraints or ConstraintSet(), aggregation=aggregation,
        )
        self.net = build_network(self.cfg, np.random.default_rng(seed))
        self.examples_seen = 0

    @classmethod
    def from_run_config(cls, rc, d, target_dim, seed, learning_rate=None, context_dim=None):
        """Регрессор по конфигурации команды regress"""
        constraints = ConstraintSet(w_max=rc.w_max, sigma2_min=rc.sigma2_min, sigma2_max=rc.sigma2_max,
                                    mu_min=rc.mu_min, mu_max=rc.mu_max, xi=rc.xi)
        return cls(d, rc.layer_sizes,
                   context_dim if context_dim is not None else rc.context_dim,
                   learning_rate if learning_rate is not None else rc.learning_rate,
                   target_dim=target_dim, form=rc.form, base_model=rc.base_model, bias_r=rc.bias_r,
                   sigma2_bias=rc.sigma2_bias, bias_scale=rc.bias_scale, constraints=constraints,
                   aggregation=rc.aggregation, sigma_fixed=rc.sigma_fixed, blr_tau=rc.blr_tau,
                   blr_tau0=rc.blr_tau0, seed=seed)

    def _vectorize(self, mean):
        """Одномерные средние (n,) в многомерные эксперты: средние (n, D) и неопределённости"""
        D = self.target_dim
        mu = np.repeat(mean[:, None], D, axis=1)
        if self.form == pog.ISOTROPIC:
            return mu, np.full(mean.size, 1.0 / self.sigma2_fixed)
        return mu, np.broadcast_to(np.eye(D) / self.sigma2_fixed, (mean.size, D, D)).copy()

    def base_arrays(self, x):
        """
        Базовые эксперты нулевого слоя для признаков x в виде массивов

        Для многомерной цели эксперт по признаку xⱼ имеет среднее xⱼ·𝟙.
        """
        if self.base_model == BASE_NONE:
            mean, var = np.empty(0), np.empty(0)
        elif self.base_model == BASE_FEATURE:
            mean, var = x, np.full(self.d, self.sigma2_fixed)
        elif self.base_model == BASE_BLR:
            mean, var = self.blr.predict(x)
        else:
            mean, var = np.zeros(1), np.ones(1)
        if self.form == pog.UNIVARIATE:
            return mean, var
        return self._vectorize(mean)

    def _inputs(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.d:
            raise ValidationError(f"ожидается {self.d} признаков, получено {x.size}")
        return x

    def _target(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        return float(y[0]) if self.form == pog.UNIVARIATE else y

    def trace(self, x):
        """Прямой проход сети для признаков x"""
        x = self._inputs(x)
        mu, unc = self.base_arrays(x)
        return forward(self.net, mu, unc, x)

    def predict(self, x):
        """Выходная плотность сети (GaussianExpert) без обновления"""
        return aggregate(self.net, self.trace(x))

    def learn(self, x, y):
        """
        Один шаг онлайн-обучения

        Returns:
            GaussianExpert: Предсказание до обновления
        """
        x = self._inputs(x)
        y = self._target(y)
        mu, unc = self.base_arrays(x)
        trace = forward(self.net, mu, unc, x)
        prediction = aggregate(self.net, trace)
        learn_from_trace(self.net, trace, y)
        if self.blr is not None:
            self.blr.update(x, y)
        self.examples_seen += 1
        return prediction

    def fit(self, X, Y, epochs, rng, progress=None):
        """
        Обучение по эпохам; в начале каждой эпохи примеры перемешиваются

        Args:
            X (np.ndarray): Признаки (N, d)
            Y (np.ndarray): Цели (N, D)
            epochs (int): Число эпох
            rng (np.random.Generator): Генератор для перестановок
            progress (callable): Вызывается после каждой эпохи с её номером
        """
        for epoch in range(epochs):
            for i in epoch_order(len(X), rng):
                self.learn(X[i], Y[i])
            logger.debug(f"Эпоха {epoch + 1}/{epochs} завершена")
            if progress is not None:
                progress(epoch + 1)
        return self

    def predict_arrays(self, X):
        """
        Средние (N, D) и скалярные дисперсии (N,) для набора признаков

        Для полной ковариации дисперсия равна среднему диагональному элементу.
        """
        means = np.empty((len(X), self.target_dim))
        variances = np.empty(len(X))
        for i, x in enumerate(X):
            g = self.predict(x)
            means[i] = np.atleast_1d(g.mean)
            if self.form == pog.FULL:
                variances[i] = np.trace(g.covariance) / self.target_dim
            else:
                variances[i] = g.variance
        return means, variances

    def mean_nll(self, X, Y):
        """Средняя отрицательная лог-плотность выхода сети на наборе"""
        total = 0.0
        for x, y in zip(X, Y):
            total -= log_density(self.net, self.trace(x), self._target(y))
        return total / len(X)

    def layer_nll(self, X, Y):
        """
        Средняя NLL каждого нейрона, по слоям

        Returns:
            list: Массивы (K_i,) для каждого слоя
        """
        sums = None
        for x, y in zip(X, Y):
            per_layer = self.trace(x).layer_nll(self._target(y))
            sums = per_layer if sums is None else [s + p for s, p in zip(sums, per_layer)]
        return [s / len(X) for s in sums]
