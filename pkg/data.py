"""
Загрузка и подготовка данных: CSV и IDX-файлы, разбиение с нормализацией,
перемешивание по эпохам и синтетические генераторы для всех экспериментов.
"""

import gzip
import logging
import math
import os
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import MinMaxScaler, StandardScaler

from config import DATA_DIR
from errors import DataFormatError, ValidationError

logger = logging.getLogger("GGLN.Data")

NORM_ZSCORE = 'zscore'
NORM_MINMAX = 'minmax'
NORM_MODES = (NORM_ZSCORE, NORM_MINMAX)

IDX_IMAGE_MAGIC = 0x00000803

SWISS_T_MIN = 1.5 * math.pi
SWISS_T_MAX = 4.5 * math.pi
SWISS_SCALE = 0.9 / SWISS_T_MAX


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Набор данных: признаки (N, d), цели (N, D) и нормализаторы,
    обученные только на обучающей части

    Args:
        features (np.ndarray): Признаки (N, d)
        targets (np.ndarray): Цели (N, D)
        feature_scaler: Нормализатор признаков (None: данные не нормализованы)
        target_scaler: Нормализатор целей
        name (str): Имя набора для отчётов
    """
    features: np.ndarray
    targets: np.ndarray
    feature_scaler: Optional[object] = None
    target_scaler: Optional[object] = None
    name: str = ''

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if features.ndim != 2 or targets.ndim != 2 or features.shape[0] != targets.shape[0]:
            raise ValidationError(f"несогласованные формы признаков {features.shape} и целей {targets.shape}")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'targets', targets)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def target_dim(self):
        return self.targets.shape[1]

    def inverse_targets(self, y):
        """Переводит цели (или предсказания) обратно в исходные единицы"""
        y = np.asarray(y, dtype=float)
        if self.target_scaler is None:
            return y
        flat = y.reshape(-1, self.target_dim)
        return self.target_scaler.inverse_transform(flat).reshape(y.shape)

    def target_scale(self):
        """Множители перехода от нормализованных единиц цели к исходным (D,)"""
        if self.target_scaler is None:
            return np.ones(self.target_dim)
        if isinstance(self.target_scaler, StandardScaler):
            return np.asarray(self.target_scaler.scale_, dtype=float)
        return 1.0 / np.asarray(self.target_scaler.scale_, dtype=float)


def resolve_path(path):
    """Путь как есть, если файл существует, иначе относительно каталога данных"""
    if os.path.exists(path) or os.path.isabs(path):
        return path
    return os.path.join(DATA_DIR, path)


def _column_positions(columns, target_columns):
    positions = []
    for col in target_columns:
        if isinstance(col, (int, np.integer)):
            if not -len(columns) <= col < len(columns):
                raise DataFormatError(f"нет столбца с номером {col}")
            positions.append(col % len(columns))
        elif col in columns:
            positions.append(columns.index(col))
        else:
            raise DataFormatError(f"нет столбца {col!r}")
    return positions


def load_csv(path, target_columns=(-1,)):
    """
    Загружает числовой CSV-файл с заголовком

    Args:
        path (str): Путь к файлу (или имя внутри каталога данных)
        target_columns (tuple): Имена или номера столбцов цели

    Returns:
        Dataset: Ненормализованный набор данных
    """
    path = resolve_path(path)
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"{path}: пустой файл")
    except pd.errors.ParserError as e:
        raise DataFormatError(f"{path}: ошибка разбора CSV: {e}")

    if df.empty:
        raise DataFormatError(f"{path}: набор данных пуст")

    numeric = df.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna() & df.notna()
    if bad.values.any():
        row = int(np.flatnonzero(bad.values.any(axis=1))[0])
        col = df.columns[bad.values[row]][0]
        raise DataFormatError(f"{path}, строка {row + 2}: нечисловое значение в столбце {col!r}")

    missing = numeric.isna().any(axis=1)
    if missing.any():
        logger.warning(f"{path}: отброшено строк с пропусками: {int(missing.sum())}")
        numeric = numeric[~missing]
    if numeric.empty:
        raise DataFormatError(f"{path}: после удаления пропусков не осталось строк")

    columns = list(numeric.columns)
    targets = _column_positions(columns, list(target_columns))
    features = [i for i in range(len(columns)) if i not in targets]
    values = numeric.to_numpy(dtype=float)
    name = os.path.splitext(os.path.basename(path))[0]
    logger.info(f"Загружен {path}: N={len(values)}, d={len(features)}")
    return Dataset(values[:, features], values[:, targets], name=name)


def _make_scaler(mode):
    if mode == NORM_ZSCORE:
        return StandardScaler()
    if mode == NORM_MINMAX:
        return MinMaxScaler(feature_range=(-1, 1))
    raise ValidationError(f"неизвестный режим нормализации: {mode}")


def _fit_scaler(values, mode, what):
    scaler = _make_scaler(mode).fit(values)
    constant = np.flatnonzero(np.ptp(values, axis=0) == 0)
    if constant.size:
        logger.warning(f"Постоянные столбцы {what} {constant.tolist()}: масштаб принят равным 1")
    return scaler


def split_normalize(ds, train_fraction=0.9, seed=0, mode=NORM_ZSCORE, normalize_targets=True):
    """
    Случайное разбиение и нормализация по статистикам обучающей части

    Args:
        ds (Dataset): Исходный набор
        train_fraction (float): Доля обучающей части (floor(N·fraction) строк)
        seed (int): Зерно разбиения
        mode (str): zscore или minmax (в [-1, 1])
        normalize_targets (bool): Нормализовать ли цели

    Returns:
        tuple: (train, test)
    """
    if ds.n < 2:
        raise ValidationError(f"для разбиения нужно N >= 2, получено {ds.n}")
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction должна лежать в (0, 1), получено {train_fraction}")
    n_train = min(max(int(math.floor(ds.n * train_fraction)), 1), ds.n - 1)
    train_idx, test_idx = train_test_split(np.arange(ds.n), train_size=n_train, random_state=seed, shuffle=True)

    fx = _fit_scaler(ds.features[train_idx], mode, 'признаков')
    fy = _fit_scaler(ds.targets[train_idx], mode, 'целей') if normalize_targets else None

    def part(idx):
        y = ds.targets[idx]
        return Dataset(fx.transform(ds.features[idx]), fy.transform(y) if fy is not None else y,
                       fx, fy, ds.name)

    return part(train_idx), part(test_idx)


def epoch_order(n, rng):
    """Перестановка номеров примеров для одной эпохи"""
    return rng.permutation(n)


def hetero_mean(x):
    """μ(x) = 2[exp(−30(x − 0.25)²) + sin(πx²)] − 2"""
    x = np.asarray(x, dtype=float)
    return 2.0 * (np.exp(-30.0 * (x - 0.25) ** 2) + np.sin(np.pi * x ** 2)) - 2.0


def hetero_log_std(x):
    """Логарифм стандартного отклонения шума g(x) = sin(2πx)"""
    return np.sin(2.0 * np.pi * np.asarray(x, dtype=float))


def gen_heteroskedastic(n, seed):
    """
    Одномерная задача с гетероскедастическим шумом: x ~ U[0, 1],
    y ~ N(μ(x), exp(g(x))²)
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = hetero_mean(x) + np.exp(hetero_log_std(x)) * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None], name='heteroskedastic')


def swiss_roll_curve(t):
    """Точки кривой рулета при параметре t, уже в масштабе [−1, 1]²"""
    t = np.asarray(t, dtype=float)
    return SWISS_SCALE * np.stack([t * np.cos(t), t * np.sin(t)], axis=-1)


def gen_swiss_roll(n, noise, seed):
    """
    Зашумлённые точки двумерного рулета, t ∈ [1.5π, 4.5π], в квадрате [−1, 1]²

    Args:
        n (int): Число точек
        noise (float): Стандартное отклонение гауссова шума
        seed (int): Зерно

    Returns:
        Dataset: Признаки и цели совпадают (точки (n, 2))
    """
    if noise < 0:
        raise ValidationError(f"noise должен быть >= 0, получено {noise}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(SWISS_T_MIN, SWISS_T_MAX, n)
    points = np.clip(swiss_roll_curve(t) + noise * rng.standard_normal((n, 2)), -1.0, 1.0)
    return Dataset(points, points.copy(), name='swiss_roll')


def gen_linear(n, d, noise, seed):
    """
    Линейная гауссова задача y = xθ + β + noise·ε с θ, β ~ N(0, 1) и x ~ N(0, I)
    """
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(d)
    beta = rng.standard_normal()
    x = rng.standard_normal((n, d))
    y = x @ theta + beta + noise * rng.standard_normal(n)
    return Dataset(x, y[:, None], name='linear')


def load_idx_images(path):
    """
    Читает файл изображений в формате IDX (допускается сжатие gzip)

    Returns:
        Dataset: Плоские векторы пикселей (N, rows·cols); цели равны признакам
    """
    path = resolve_path(path)
    opener = gzip.open if path.endswith('.gz') else open
    with opener(path, 'rb') as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: файл слишком короткий для заголовка IDX")
    magic, n, rows, cols = struct.unpack('>IIII', raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{path}: неверная магия IDX 0x{magic:08x}, ожидается 0x{IDX_IMAGE_MAGIC:08x}")
    size = n * rows * cols
    if len(raw) - 16 != size:
        raise DataFormatError(f"{path}: ожидается {size} байт пикселей, найдено {len(raw) - 16}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols).astype(float)
    logger.info(f"Загружено изображений: {n} ({rows}x{cols}) из {path}")
    return Dataset(pixels, pixels.copy(), name=os.path.basename(path))


def fit_noisy_scaler(images, rng, noise_std=75.0, count=10000):
    """
    Покомпонентный нормализатор в [−1, 1], обученный на первых count
    изображениях с добавленным шумом N(0, noise_std²)
    """
    sample = np.asarray(images, dtype=float)[:count]
    noisy = sample + noise_std * rng.standard_normal(sample.shape)
    return MinMaxScaler(feature_range=(-1, 1)).fit(noisy)


def scale_images(ds, scaler):
    """Применяет нормализатор изображений к признакам и целям"""
    scaled = scaler.transform(ds.features)
    return replace(ds, features=scaled, targets=scaled.copy(), feature_scaler=scaler, target_scaler=scaler)
