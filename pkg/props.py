#!/usr/bin/env python
"""
Проверка свойств движка во время выполнения: замкнутость PoG, градиенты,
выпуклость, switching-агрегация, гейтинг, проекции и локальность обновлений.
"""

import logging
import time

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid
from scipy.stats import norm
from tabulate import tabulate

import pog
from constraints import ConstraintSet, backstop_project
from errors import GGLNError
from gating import context_index, sample_composed
from network import NetworkConfig, SwitchingState, build_network, infer_update, switching_step

logger = logging.getLogger("GGLN.Props")


def _random_univariate(rng, m, variances=(0.2, 3.0)):
    return [pog.UnivariateGaussian(rng.uniform(-3, 3), rng.uniform(*variances)) for _ in range(m)]


def check_closure(rng, instances):
    """PoG против квадратуры и полная форма против плотного решателя"""
    worst = 0.0
    grid = np.linspace(-30, 30, 1_000_000)
    for _ in range(instances):
        experts = _random_univariate(rng, int(rng.integers(1, 6)), variances=(0.1, 4.0))
        w = rng.uniform(0.1, 3.0, len(experts))
        out = pog.pog_univariate(experts, w)
        log_prod = sum(wi * norm.logpdf(grid, e.mean, np.sqrt(e.variance)) for wi, e in zip(w, experts))
        prod = np.exp(log_prod - log_prod.max())
        prod /= trapezoid(prod, grid)
        worst = max(worst, float(np.max(np.abs(prod - norm.pdf(grid, out.mean, np.sqrt(out.variance))))))

    worst_full = 0.0
    for _ in range(instances):
        D, m = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        experts = []
        for _ in range(m):
            A = rng.standard_normal((D, D))
            experts.append(pog.FullGaussian(rng.standard_normal(D), A @ A.T + D * np.eye(D)))
        w = rng.uniform(0.1, 2.0, m)
        out = pog.pog_full(experts, w)
        P = sum(wi * e.precision_matrix for wi, e in zip(w, experts))
        mean = linalg.solve(P, sum(wi * e.precision_matrix @ e.mean for wi, e in zip(w, experts)), assume_a='pos')
        worst_full = max(worst_full, float(np.max(np.abs(out.mean - mean))),
                         float(np.max(np.abs(out.precision_matrix - P))))
    return worst < 1e-6 and worst_full < 1e-9, f"квадратура {worst:.2e}, полная форма {worst_full:.2e}"


def check_gradient(rng, instances):
    """Градиент NLL против конечных разностей, знак гессиана, выпуклость по середине"""
    worst = 0.0
    min_eig = np.inf
    for _ in range(instances):
        experts = _random_univariate(rng, int(rng.integers(2, 6)))
        w = rng.uniform(0.2, 2.0, len(experts))
        y = rng.uniform(-3, 3)
        grad = pog.nll_gradient(pog.LossEvalPoint(y, experts, w))
        h = 1e-6
        fd = np.array([(pog.nll_loss(pog.LossEvalPoint(y, experts, w + h * e))
                        - pog.nll_loss(pog.LossEvalPoint(y, experts, w - h * e))) / (2 * h)
                       for e in np.eye(len(w))])
        worst = max(worst, float(np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-3)))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(pog.reduced_hessian(y, experts, w)).min()))

    violations = 0
    for _ in range(10 * instances):
        experts = _random_univariate(rng, 3)
        y = rng.uniform(-3, 3)
        a, b = rng.uniform(0.1, 2.0, 3), rng.uniform(0.1, 2.0, 3)
        mid = pog.nll_loss(pog.LossEvalPoint(y, experts, 0.5 * (a + b)))
        ends = 0.5 * (pog.nll_loss(pog.LossEvalPoint(y, experts, a)) + pog.nll_loss(pog.LossEvalPoint(y, experts, b)))
        violations += mid > ends + 1e-12
    ok = worst < 1e-5 and min_eig >= -1e-8 and violations == 0
    return ok, f"отн. ошибка {worst:.2e}, мин. собств. {min_eig:.2e}, нарушений выпуклости {violations}"


def check_switching(rng, instances):
    """Веса в [0, 1] с суммой 1; симметричная пара остаётся (½, ½)"""
    st = SwitchingState.initial(2)
    for _ in range(10000):
        _, st = switching_step(st, np.array([0.3, 0.3]))
    symmetric = float(np.max(np.abs(st.weights - 0.5)))

    worst = 0.0
    st = SwitchingState.initial(5)
    for _ in range(100 * instances):
        _, st = switching_step(st, rng.uniform(0.0, 2.0, 5) + 1e-12)
        if np.any(st.weights < 0) or np.any(st.weights > 1):
            return False, "вес вне [0, 1]"
        worst = max(worst, abs(st.weights.sum() - 1.0))
    return symmetric < 1e-12 and worst <= 1e-12, f"отклонение суммы {worst:.1e}, симметрия {symmetric:.1e}"


def check_gating(rng, instances):
    """Номер контекста в [0, 2^s); сдвиг внутри ячейки не меняет номер"""
    for _ in range(instances):
        d, s = int(rng.integers(1, 6)), int(rng.integers(1, 9))
        cc = sample_composed(d, s, 0.05, rng)
        z = rng.standard_normal(d)
        idx = context_index(cc, z)
        if not 0 <= idx < 2 ** s:
            return False, f"номер {idx} вне диапазона"
        margins = np.abs(cc.normals @ z - cc.offsets)
        step = rng.standard_normal(d)
        step *= 0.5 * margins.min() / np.linalg.norm(step)
        if context_index(cc, z + step) != idx:
            return False, "сдвиг внутри ячейки сменил контекст"
    return True, f"{instances} композиций"


def check_backstop(rng, instances):
    """Проекция приводит любые конечные веса в допустимое множество"""
    cs = ConstraintSet()
    for _ in range(instances):
        experts = _random_univariate(rng, int(rng.integers(2, 6)))
        w = rng.uniform(-5.0, 5000.0, len(experts))
        try:
            projected = backstop_project(w, experts, cs)
        except GGLNError as e:
            return False, str(e)
        p = projected @ np.array([e.precision for e in experts])
        if np.any(projected < 0) or np.any(projected > cs.w_max) \
                or not cs.precision_min * (1 - 1e-9) <= p <= cs.precision_max * (1 + 1e-9):
            return False, "проекция вне допустимого множества"
    return True, f"{instances} случайных строк"


def check_locality(rng, instances):
    """Обновление меняет только активные строки весов"""
    cfg = NetworkConfig(layer_sizes=(4, 2), context_dim=3, learning_rate=0.01, side_dim=2, base_count=2)
    net = build_network(cfg, rng)
    for _ in range(instances):
        z = rng.standard_normal(2)
        before = [[layer.weights(k) for k in range(layer.neurons)] for layer in net.layers]
        active = [layer.gating.indices(z) for layer in net.layers]
        infer_update(net, _random_univariate(rng, 2), z, rng.uniform(-2, 2))
        for layer, old, idx in zip(net.layers, before, active):
            for k in range(layer.neurons):
                untouched = np.arange(layer.cells) != idx[k]
                if not np.array_equal(layer.weights(k)[untouched], old[k][untouched]):
                    return False, "изменилась неактивная строка"
    return True, f"{instances} обновлений"


SUITES = {
    'closure': check_closure,
    'gradient': check_gradient,
    'switching': check_switching,
    'gating': check_gating,
    'backstop': check_backstop,
    'locality': check_locality,
}


def run_props(pc):
    """
    Запускает выбранные наборы свойств и печатает таблицу результатов

    Args:
        pc (PropsConfig): Конфигурация

    Returns:
        tuple: (все ли наборы прошли, строки отчёта)
    """
    names = list(pc.suites) or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise GGLNError(f"неизвестные наборы свойств: {unknown}")
    rows = []
    for name in names:
        rng = np.random.default_rng(pc.seed)
        logger.info(f"Проверка свойств: {name}...")
        started = time.perf_counter()
        try:
            ok, detail = SUITES[name](rng, pc.instances)
        except GGLNError as e:
            ok, detail = False, f"ошибка: {e}"
        rows.append({'suite': name, 'passed': bool(ok), 'detail': detail,
                     'seconds': round(time.perf_counter() - started, 2)})
    print(tabulate([[r['suite'], 'OK' if r['passed'] else 'FAIL', r['detail'], r['seconds']] for r in rows],
                   headers=['Набор', 'Итог', 'Детали', 'Время, с'], tablefmt='psql'))
    return all(r['passed'] for r in rows), rows
