import json
import logging
import math
import os
import time
from datetime import datetime

import numpy as np
from joblib import Parallel, delayed
from rich.progress import Progress
from scipy import stats
from sklearn.metrics import mean_squared_error

from config import RESULTS_DIR
from constraints import ConstraintSet
from core import GGLNRegressor
from data import (gen_heteroskedastic, gen_linear, hetero_log_std, load_csv, split_normalize)
from network import save_snapshot

logger = logging.getLogger("GGLN.Benchmark")

SYNTHETIC_DATASETS = ('linear', 'heteroskedastic')


def load_regression_dataset(rc):
    """
    Набор данных для команды regress: CSV-файл или синтетический генератор

    Args:
        rc (RegressConfig): Конфигурация

    Returns:
        Dataset: Ненормализованный набор
    """
    if rc.dataset == 'linear':
        return gen_linear(rc.synthetic_n, rc.linear_dim, rc.linear_noise, seed=0)
    if rc.dataset == 'heteroskedastic':
        return gen_heteroskedastic(rc.synthetic_n, seed=0)
    return load_csv(rc.dataset, rc.target_columns)


def evaluate(model, test):
    """
    Метрики на тестовой части в исходных единицах цели

    NLL переводится из нормализованных единиц прибавлением логарифма
    якобиана нормализатора цели.

    Returns:
        dict: rmse и nll
    """
    means, _ = model.predict_arrays(test.features)
    pred = test.inverse_targets(means)
    truth = test.inverse_targets(test.targets)
    rmse = math.sqrt(mean_squared_error(truth, pred))
    nll = model.mean_nll(test.features, test.targets) + float(np.sum(np.log(test.target_scale())))
    return {'rmse': rmse, 'nll': nll}


def run_seed(ds, rc, seed, learning_rate=None, context_dim=None, on_epoch=None):
    """
    Один запуск регрессии: разбиение, нормализация, обучение по эпохам, метрики

    Args:
        ds (Dataset): Исходный набор
        rc (RegressConfig): Конфигурация
        seed (int): Зерно (разбиение, контексты, порядок примеров)
        learning_rate, context_dim: Значения из перебора (по умолчанию из rc)
        on_epoch (callable): Вызывается после каждой эпохи

    Returns:
        dict: Метрики запуска
    """
    train, test = split_normalize(ds, rc.train_fraction, seed, rc.normalization)
    model = GGLNRegressor.from_run_config(rc, train.d, train.target_dim, seed,
                                          learning_rate=learning_rate, context_dim=context_dim)
    model.fit(train.features, train.targets, rc.epochs, np.random.default_rng(seed), progress=on_epoch)
    metrics = evaluate(model, test)
    if rc.snapshot and seed == rc.seeds[0]:
        save_snapshot(model.net, rc.snapshot)
    logger.info(f"Зерно {seed}: RMSE={metrics['rmse']:.4f}, NLL={metrics['nll']:.4f}")
    return {'seed': seed, 'n_train': train.n, 'n_test': test.n, **metrics}


def summarize(values):
    """Среднее и стандартная ошибка"""
    values = np.asarray(values, dtype=float)
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return {'mean': float(values.mean()), 'stderr': stderr}


def _run_seeds(ds, rc, jobs, learning_rate, context_dim, show_progress):
    if jobs == 1 and show_progress:
        with Progress() as progress:
            task = progress.add_task(f"{ds.name}: η={learning_rate}, s={context_dim}",
                                     total=max(len(rc.seeds) * rc.epochs, 1))
            return [run_seed(ds, rc, seed, learning_rate, context_dim,
                             on_epoch=lambda _: progress.advance(task))
                    for seed in rc.seeds]
    if jobs == 1:
        return [run_seed(ds, rc, seed, learning_rate, context_dim) for seed in rc.seeds]
    return Parallel(n_jobs=jobs)(delayed(run_seed)(ds, rc, seed, learning_rate, context_dim)
                                 for seed in rc.seeds)


def _config_result(runs, learning_rate, context_dim):
    return {
        'learning_rate': learning_rate,
        'context_dim': context_dim,
        'runs': runs,
        'rmse': summarize([r['rmse'] for r in runs]),
        'nll': summarize([r['nll'] for r in runs]),
    }


def run_regression(rc, jobs=None, show_progress=False):
    """
    Регрессионный бенчмарк: все зёрна для одной конфигурации или перебор
    по сетке (η, s) с выбором лучшей по среднему RMSE

    Args:
        rc (RegressConfig): Конфигурация
        jobs (int): Число параллельных процессов (по умолчанию из rc)
        show_progress (bool): Показывать ли индикатор выполнения

    Returns:
        dict: Результаты для записи в JSON
    """
    jobs = rc.jobs if jobs is None else jobs
    ds = load_regression_dataset(rc)
    grid = ([(lr, s) for lr in rc.sweep_learning_rates for s in rc.sweep_context_dims]
            if rc.sweep else [(rc.learning_rate, rc.context_dim)])

    configs = []
    for learning_rate, context_dim in grid:
        runs = _run_seeds(ds, rc, jobs, learning_rate, context_dim, show_progress)
        configs.append(_config_result(runs, learning_rate, context_dim))
        logger.info(f"{ds.name}: η={learning_rate}, s={context_dim}: "
                    f"RMSE {configs[-1]['rmse']['mean']:.4f} ± {configs[-1]['rmse']['stderr']:.4f}")

    best = min(configs, key=lambda c: c['rmse']['mean'])
    return {
        'command': 'regress',
        'dataset': ds.name,
        'timestamp': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
        'config': rc.to_dict(),
        'configs': configs,
        'best': {k: best[k] for k in ('learning_rate', 'context_dim', 'rmse', 'nll')},
    }


def default_output(name):
    """Путь к файлу результатов в каталоге результатов"""
    return os.path.join(RESULTS_DIR, name)


def write_json(results, path):
    """Записывает результаты в JSON-файл"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(results, fh, indent=2, ensure_ascii=False)
    logger.info(f"Результаты сохранены в {path}")
    return path


def heteroskedastic_experiment(seed, n_train=20000, n_test=2000, layer_sizes=(32, 32, 32, 32),
                               context_dim=6, learning_rate=0.001, bias_scale=1.0, grid_points=200):
    """
    Гетероскедастическая задача: обучение в один онлайн-проход, затем
    корреляция предсказанного log σ(x) с истинным и NLL нейронов по слоям

    Returns:
        dict: log_sigma_corr, layer_nll (средняя по нейронам слоя), first_layer_nll, last_layer_nll
    """
    data = gen_heteroskedastic(n_train + n_test, seed)
    train, test = split_normalize(data, train_fraction=n_train / (n_train + n_test), seed=seed)
    model = GGLNRegressor(1, layer_sizes, context_dim, learning_rate, base_model='feature',
                          bias_scale=bias_scale, aggregation='top', seed=seed)
    model.fit(train.features, train.targets, 1, np.random.default_rng(seed))

    grid = np.linspace(0.0, 1.0, grid_points)[:, None]
    _, variances = model.predict_arrays(train.feature_scaler.transform(grid))
    log_sigma = 0.5 * np.log(variances) + np.log(train.target_scale()[0])
    corr = float(stats.pearsonr(log_sigma, hetero_log_std(grid[:, 0]))[0])

    layer_nll = [float(v.mean()) for v in model.layer_nll(test.features, test.targets)]
    logger.info(f"Гетероскедастическая задача, зерно {seed}: corr(log σ)={corr:.3f}, "
                f"NLL слоёв {layer_nll[0]:.3f} → {layer_nll[-1]:.3f}")
    return {'seed': seed, 'log_sigma_corr': corr, 'layer_nll': layer_nll,
            'first_layer_nll': layer_nll[0], 'last_layer_nll': layer_nll[-1]}


def blr_experiment(seeds=range(10), n=1000, d=4, noise=0.5, layer_sizes=(32, 32, 32, 32),
                   context_dim=4, learning_rate=0.01):
    """
    Сравнение BLR-экспертов и постоянного базового эксперта после первой
    эпохи на линейной гауссовой задаче (парный t-тест)

    Returns:
        dict: RMSE обеих моделей по зёрнам и одностороннее p-значение
    """
    blr_rmse, const_rmse = [], []
    for seed in seeds:
        train, test = split_normalize(gen_linear(n, d, noise, seed), seed=seed)
        for base_model, sink in (('blr', blr_rmse), ('constant', const_rmse)):
            model = GGLNRegressor(d, layer_sizes, context_dim, learning_rate, base_model=base_model,
                                  constraints=ConstraintSet(), seed=seed)
            model.fit(train.features, train.targets, 1, np.random.default_rng(seed))
            sink.append(evaluate(model, test)['rmse'])
    p_value = float(stats.ttest_rel(blr_rmse, const_rmse, alternative='less').pvalue)
    return {'blr_rmse': blr_rmse, 'constant_rmse': const_rmse, 'p_value': p_value}


def complexity_scaling(widths=(8, 16, 32, 64), context_dims=(1, 2, 4, 8), n=200, d=4, depth=2, seed=0):
    """
    Время одного шага обучения (предсказание + обновление) в зависимости от
    ширины слоя и размерности контекста

    Ширина меняется при фиксированном s = context_dims[0], размерность
    контекста при фиксированной ширине widths[0]. Наклон log t по log ширины
    оценивается МНК.

    Returns:
        dict: rows (width, context_dim, seconds_per_example) и width_slope
    """
    data = gen_linear(n, d, 0.5, seed)
    rows = []

    def measure(width, s):
        model = GGLNRegressor(d, (width,) * depth + (1,), s, 0.01, seed=seed)
        started = time.perf_counter()
        for x, y in zip(data.features, data.targets):
            model.learn(x, y)
        seconds = (time.perf_counter() - started) / n
        rows.append({'width': width, 'context_dim': s, 'seconds_per_example': seconds})
        return seconds

    width_times = [measure(w, context_dims[0]) for w in widths]
    for s in context_dims[1:]:
        measure(widths[0], s)
    slope = float(np.polyfit(np.log(widths), np.log(width_times), 1)[0])
    logger.info(f"Масштабирование: наклон log t по log ширины {slope:.2f}")
    return {'rows': rows, 'width_slope': slope}
