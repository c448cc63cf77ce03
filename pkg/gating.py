"""
Гейтинг полупространствами.

Каждый нейрон владеет s случайными полупространствами H = {z : z·v ≥ b};
биты попадания складываются в номер контекста (little-endian: i-й контекст
даёт вклад 2^i), который выбирает активную строку матрицы весов.
"""

import logging
from dataclasses import dataclass

import numpy as np

from errors import ValidationError

logger = logging.getLogger("GGLN.Gating")

UNIT_NORM_TOLERANCE = 1e-9


def _side_info(z, d):
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != d:
        raise ValidationError(f"размерность side information {z.size}, ожидается {d}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("side information содержит нечисловые значения")
    return z


@dataclass(frozen=True, eq=False)
class HalfSpaceContext:
    """
    Полупространственная контекстная функция

    Args:
        normal (np.ndarray): Единичный вектор нормали v (d,)
        offset (float): Смещение b
    """
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        v = np.array(self.normal, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)) or not np.isfinite(self.offset):
            raise ValidationError("параметры полупространства должны быть конечными")
        if abs(np.linalg.norm(v) - 1.0) >= UNIT_NORM_TOLERANCE:
            raise ValidationError(f"нормаль должна иметь единичную длину, |v| = {np.linalg.norm(v)}")
        v.setflags(write=False)
        object.__setattr__(self, 'normal', v)
        object.__setattr__(self, 'offset', float(self.offset))

    @property
    def dim(self):
        return self.normal.size


@dataclass(frozen=True, eq=False)
class ComposedContext:
    """Композиция s полупространств в контекст со значениями в [0, 2^s)"""
    contexts: tuple

    def __post_init__(self):
        contexts = tuple(self.contexts)
        if len(contexts) < 1:
            raise ValidationError("композиция требует хотя бы одного контекста")
        dims = {c.dim for c in contexts}
        if len(dims) != 1:
            raise ValidationError(f"контексты разной размерности: {sorted(dims)}")
        object.__setattr__(self, 'contexts', contexts)

    @property
    def size(self):
        return len(self.contexts)

    @property
    def dim(self):
        return self.contexts[0].dim

    @property
    def cells(self):
        return 2 ** self.size

    @property
    def normals(self):
        return np.stack([c.normal for c in self.contexts])

    @property
    def offsets(self):
        return np.array([c.offset for c in self.contexts])


def sample_halfspace(d, bias_scale, rng):
    """
    Сэмплирует полупространство: v = x/|x|, x ~ N(0, I_d); b ~ bias_scale·N(0, 1)

    Args:
        d (int): Размерность side information
        bias_scale (float): Масштаб смещения (0.05 для таблиц, 0.5 для 2D)
        rng (np.random.Generator): Генератор случайных чисел

    Returns:
        HalfSpaceContext: Контекстная функция
    """
    if d < 1:
        raise ValidationError(f"размерность должна быть >= 1, получено {d}")
    if bias_scale < 0:
        raise ValidationError(f"bias_scale должен быть >= 0, получено {bias_scale}")
    while True:
        x = rng.standard_normal(d)
        norm = np.linalg.norm(x)
        if norm > 0:
            break
    return HalfSpaceContext(x / norm, bias_scale * rng.standard_normal())


def sample_composed(d, s, bias_scale, rng):
    """Сэмплирует композицию из s полупространств"""
    return ComposedContext(tuple(sample_halfspace(d, bias_scale, rng) for _ in range(s)))


def context_bit(c, z):
    """1, если z·v ≥ b, иначе 0"""
    z = _side_info(z, c.dim)
    return int(z @ c.normal >= c.offset)


def context_index(cc, z):
    """
    Номер контекста Σ c_i(z)·2^i

    Args:
        cc (ComposedContext): Композиция контекстов
        z (np.ndarray): Side information

    Returns:
        int: Номер ячейки в [0, 2^s)
    """
    z = _side_info(z, cc.dim)
    bits = (cc.normals @ z >= cc.offsets).astype(np.int64)
    return int(bits @ (1 << np.arange(cc.size, dtype=np.int64)))


class LayerGating:
    """
    Контексты всех нейронов слоя в виде массивов для векторного вычисления

    Args:
        normals (np.ndarray): Нормали (K, s, d)
        offsets (np.ndarray): Смещения (K, s)
    """

    def __init__(self, normals, offsets):
        self.normals = np.asarray(normals, dtype=float)
        self.offsets = np.asarray(offsets, dtype=float)
        self.size = self.normals.shape[1]
        self.dim = self.normals.shape[2]
        self._powers = 1 << np.arange(self.size, dtype=np.int64)

    @classmethod
    def sample(cls, neurons, d, s, bias_scale, rng):
        """Сэмплирует контексты для neurons нейронов"""
        composed = [sample_composed(d, s, bias_scale, rng) for _ in range(neurons)]
        return cls.from_composed(composed)

    @classmethod
    def from_composed(cls, composed):
        return cls(np.stack([cc.normals for cc in composed]),
                   np.stack([cc.offsets for cc in composed]))

    def composed(self, k):
        """ComposedContext нейрона k"""
        return ComposedContext(tuple(HalfSpaceContext(v, b)
                                     for v, b in zip(self.normals[k], self.offsets[k])))

    def indices(self, z):
        """
        Номера активных контекстов всех нейронов слоя

        Args:
            z (np.ndarray): Side information (d,)

        Returns:
            np.ndarray: Номера (K,)
        """
        z = _side_info(z, self.dim)
        bits = (self.normals @ z >= self.offsets).astype(np.int64)
        return bits @ self._powers
