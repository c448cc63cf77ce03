import json
import os
import typing
from dataclasses import asdict, dataclass, fields
from typing import Optional

from dotenv import load_dotenv

from errors import ConfigError

# Загрузка переменных окружения из .env файла
load_dotenv()

# Каталоги данных и результатов
DATA_DIR = os.getenv('GGLN_DATA_DIR', './data')
RESULTS_DIR = os.getenv('GGLN_RESULTS_DIR', './results')
LOG_FILE = os.getenv('GGLN_LOG_FILE', 'ggln.log')

# Табличная регрессия (UCI)
DEFAULT_LAYER_SIZES = (256,) * 12
DEFAULT_CONTEXT_DIMS = (4, 6, 8, 10)
DEFAULT_LEARNING_RATES = (1e-3, 3e-3, 1e-2)
DEFAULT_EPOCHS = 40
DEFAULT_BIAS_SCALE = 0.05
DEFAULT_BIAS_R = 5.0
DEFAULT_W_MAX = 1000.0
DEFAULT_SIGMA2_MIN = 1e-3  # в нормализованных единицах цели
DEFAULT_SIGMA2_MAX = 1e3
DEFAULT_XI = 1e-4
DEFAULT_SEEDS = (0, 1, 2, 3, 4)

# Многомерная регрессия (SARCOS)
MULTIVARIATE_LAYER_SIZES = (50,) * 4
MULTIVARIATE_CONTEXT_DIM = 14
MULTIVARIATE_LEARNING_RATE = 0.01
MULTIVARIATE_BIAS_MEAN = 7.0
MULTIVARIATE_BIAS_VARIANCE = 5.0
MULTIVARIATE_W_MAX = 1e5
MULTIVARIATE_SIGMA2_MIN = 1.0
MULTIVARIATE_SIGMA2_MAX = 1e9

# Контекстные бандиты
BANDIT_LAYER_SIZES = (1000, 100, 1)
BANDIT_CONTEXT_DIM = 1
BANDIT_LEARNING_RATE = 0.003
BANDIT_BONUS = 1.0

# Шумоподавление
DENOISE_LAMBDA = 0.01
DENOISE_INFILL_STEP = 0.002

# Пресеты сети шумоподавления по виду данных (пропущенные поля DenoiseConfig).
# Для рулета ηK ≈ 0.06, K: число входов нейрона.
DENOISE_PRESETS = {
    'swiss_roll': {
        'layer_sizes': (32, 32, 32, 1),
        'context_dim': 10,
        'learning_rate': 0.002,
        'bias_scale': 0.5,
        'sigma2_bias': 0.05,
        'base_variance': 0.04,
        'sigma2_min': 1e-3,
    },
    'images': {
        'layer_sizes': (50, 50, 50, 1),
        'context_dim': 8,
        'learning_rate': 0.05,
        'bias_scale': 0.05,
        'sigma2_bias': 1.0,
        'base_variance': 0.3,
        'sigma2_min': 1e-4,
    },
}


def _is_optional(typ):
    return typing.get_origin(typ) is typing.Union and type(None) in typing.get_args(typ)


def _coerce(name, typ, value):
    """Приводит значение к типу поля; ошибки называют поле"""
    if _is_optional(typ):
        if value is None:
            return None
        typ = next(t for t in typing.get_args(typ) if t is not type(None))
    try:
        if typ is bool:
            if isinstance(value, str) and value.lower() in ('true', 'false'):
                return value.lower() == 'true'
            if not isinstance(value, bool):
                raise ValueError("ожидается true или false")
            return value
        if typ is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError("ожидается целое число")
            return int(float(value))
        if typ is float:
            if isinstance(value, bool):
                raise ValueError("ожидается число")
            return float(value)
        if typ is str:
            if not isinstance(value, str):
                raise ValueError("ожидается строка")
            return value
        if typ is tuple or typing.get_origin(typ) is tuple:
            if isinstance(value, (int, float, str)):
                value = [value]
            if not isinstance(value, (list, tuple)):
                raise ValueError("ожидается список")
            args = typing.get_args(typ)
            if args:
                return tuple(_coerce(name, args[0], v) for v in value)
            return tuple(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(name, f"некорректное значение {value!r}: {e}")
    raise ConfigError(name, f"неподдерживаемый тип поля {typ}")


def _check(name, ok, message):
    if not ok:
        raise ConfigError(name, message)


class _RunConfigMixin:
    """Общие проверки параметров сети и ограничений"""

    def _check_common(self):
        _check('layer_sizes', len(self.layer_sizes) >= 1 and min(self.layer_sizes) >= 1,
               "нужен хотя бы один слой, в каждом слое >= 1 нейрона")
        _check('context_dim', self.context_dim >= 1, "должен быть >= 1")
        _check('learning_rate', 0 < self.learning_rate < 1, "должен лежать в (0, 1)")
        _check('bias_scale', self.bias_scale >= 0, "должен быть >= 0")
        _check('bias_r', self.bias_r > 0, "должен быть > 0")
        _check('w_max', self.w_max >= 1, "должен быть >= 1")
        _check('sigma2_min', 0 < self.sigma2_min < self.sigma2_max, "требуется 0 < sigma2_min < sigma2_max")
        _check('seeds', len(self.seeds) >= 1, "нужно хотя бы одно зерно")
        _check('jobs', self.jobs >= 1 or self.jobs == -1, "должен быть >= 1 или -1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RegressConfig(_RunConfigMixin):
    """Параметры команды regress"""
    dataset: str = 'boston.csv'
    target_columns: tuple = (-1,)
    normalization: str = 'zscore'
    train_fraction: float = 0.9
    layer_sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES
    context_dim: int = 4
    learning_rate: float = 0.01
    bias_scale: float = DEFAULT_BIAS_SCALE
    bias_r: float = DEFAULT_BIAS_R
    sigma2_bias: float = 1.0
    form: str = 'isotropic'
    base_model: str = 'feature'
    sigma_fixed: float = 1.0
    blr_tau: float = 1.0
    blr_tau0: float = 1.0
    w_max: float = DEFAULT_W_MAX
    sigma2_min: float = DEFAULT_SIGMA2_MIN
    sigma2_max: float = DEFAULT_SIGMA2_MAX
    mu_min: Optional[float] = None
    mu_max: Optional[float] = None
    xi: float = DEFAULT_XI
    aggregation: str = 'switching'
    epochs: int = DEFAULT_EPOCHS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    sweep: bool = False
    sweep_learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    sweep_context_dims: tuple[int, ...] = DEFAULT_CONTEXT_DIMS
    synthetic_n: int = 1000
    linear_dim: int = 4
    linear_noise: float = 0.5
    output: str = ''
    snapshot: str = ''
    jobs: int = 1

    def __post_init__(self):
        self._check_common()
        _check('normalization', self.normalization in ('zscore', 'minmax'), "ожидается zscore или minmax")
        _check('train_fraction', 0 < self.train_fraction < 1, "должна лежать в (0, 1)")
        _check('form', self.form in ('isotropic', 'full'), "для многомерной цели ожидается isotropic или full")
        _check('base_model', self.base_model in ('none', 'feature', 'blr', 'constant'),
               "ожидается none, feature, blr или constant")
        _check('sigma_fixed', self.sigma_fixed > 0, "должна быть > 0")
        _check('aggregation', self.aggregation in ('top', 'switching'), "ожидается top или switching")
        _check('epochs', self.epochs >= 0, "должно быть >= 0")
        _check('target_columns', len(self.target_columns) >= 1, "нужен хотя бы один столбец цели")
        _check('sweep_learning_rates', all(0 < lr < 1 for lr in self.sweep_learning_rates),
               "каждое значение должно лежать в (0, 1)")
        _check('sweep_context_dims', all(s >= 1 for s in self.sweep_context_dims), "каждое значение >= 1")
        _check('synthetic_n', self.synthetic_n >= 2, "должно быть >= 2")


@dataclass(frozen=True)
class BanditConfig(_RunConfigMixin):
    """Параметры команды bandit"""
    env: str = 'wheel'
    horizon: int = 2000
    seeds: tuple[int, ...] = (0, 1)
    layer_sizes: tuple[int, ...] = BANDIT_LAYER_SIZES
    context_dim: int = BANDIT_CONTEXT_DIM
    learning_rate: float = BANDIT_LEARNING_RATE
    bias_scale: float = DEFAULT_BIAS_SCALE
    bias_r: float = DEFAULT_BIAS_R
    sigma2_bias: float = 1.0
    sigma_fixed: float = 1.0
    w_max: float = DEFAULT_W_MAX
    sigma2_min: float = DEFAULT_SIGMA2_MIN
    sigma2_max: float = DEFAULT_SIGMA2_MAX
    xi: float = DEFAULT_XI
    bonus: float = BANDIT_BONUS
    wheel_delta: float = 0.5
    wheel_mean_safe: float = 1.2
    wheel_mean_other: float = 1.0
    wheel_mean_large: float = 50.0
    wheel_noise: float = 0.01
    reward_scale: float = 12.5
    linear_actions: int = 3
    linear_dim: int = 4
    linear_noise: float = 0.1
    output: str = ''
    jobs: int = 1

    def __post_init__(self):
        self._check_common()
        _check('env', self.env in ('wheel', 'linear'), "ожидается wheel или linear")
        _check('horizon', self.horizon >= 1, "должен быть >= 1")
        _check('bonus', self.bonus >= 0, "должен быть >= 0")
        _check('wheel_delta', 0 < self.wheel_delta < 1, "должен лежать в (0, 1)")
        _check('wheel_noise', self.wheel_noise >= 0, "должен быть >= 0")
        _check('reward_scale', self.reward_scale > 0, "должен быть > 0")
        _check('linear_actions', self.linear_actions >= 2, "должно быть >= 2")
        _check('linear_dim', self.linear_dim >= 1, "должна быть >= 1")


@dataclass(frozen=True)
class DenoiseConfig(_RunConfigMixin):
    """Параметры команды denoise"""
    dataset: str = 'swiss_roll'
    test_dataset: str = ''
    n_train: int = 5000
    data_noise: float = 0.02
    lam: float = DENOISE_LAMBDA
    layer_sizes: Optional[tuple[int, ...]] = None
    context_dim: Optional[int] = None
    learning_rate: Optional[float] = None
    bias_scale: Optional[float] = None
    bias_r: float = 1.0
    sigma2_bias: Optional[float] = None
    bias_experts: bool = True
    base_variance: Optional[float] = None
    w_max: float = DEFAULT_W_MAX
    sigma2_min: Optional[float] = None
    sigma2_max: float = 10.0
    epochs: int = 1
    fixed_noise: bool = True
    grid_size: int = 20
    denoise_steps: int = 24
    infill_steps: int = 3000
    infill_step: float = DENOISE_INFILL_STEP
    infill_count: int = 8
    mask_size: int = 12
    hmc_steps: int = 500
    hmc_substeps: int = 150
    hmc_epsilon: float = 0.003
    hmc_mass: float = 1.0
    scaler_noise: float = 75.0
    scaler_count: int = 10000
    seeds: tuple[int, ...] = (0,)
    output: str = ''
    jobs: int = 1

    def __post_init__(self):
        preset = DENOISE_PRESETS['swiss_roll' if self.dataset == 'swiss_roll' else 'images']
        for name, value in preset.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        self._check_common()
        _check('lam', self.lam > 0, "должна быть > 0")
        _check('n_train', self.n_train >= 1, "должно быть >= 1")
        _check('data_noise', self.data_noise >= 0, "должен быть >= 0")
        _check('base_variance', self.base_variance > 0, "должна быть > 0")
        _check('sigma2_bias', self.sigma2_bias > 0, "должна быть > 0")
        _check('epochs', self.epochs >= 1, "должно быть >= 1")
        _check('grid_size', self.grid_size >= 2, "должен быть >= 2")
        _check('denoise_steps', self.denoise_steps >= 0, "должно быть >= 0")
        _check('infill_step', 0 < self.infill_step <= 1, "должен лежать в (0, 1]")
        _check('hmc_steps', self.hmc_steps >= 1, "должно быть >= 1")
        _check('hmc_substeps', self.hmc_substeps >= 1, "должно быть >= 1")
        _check('hmc_epsilon', self.hmc_epsilon > 0, "должен быть > 0")
        _check('hmc_mass', self.hmc_mass > 0, "должна быть > 0")


@dataclass(frozen=True)
class PropsConfig:
    """Параметры команды props"""
    suites: tuple[str, ...] = ()
    seed: int = 0
    instances: int = 100
    output: str = ''

    def __post_init__(self):
        _check('instances', self.instances >= 1, "должно быть >= 1")

    def to_dict(self):
        return asdict(self)


RUN_CONFIGS = {
    'regress': RegressConfig,
    'bandit': BanditConfig,
    'denoise': DenoiseConfig,
    'props': PropsConfig,
}


def parse_override(text):
    """
    Разбирает переопределение вида key=value; значение читается как JSON,
    иначе остаётся строкой
    """
    if '=' not in text:
        raise ConfigError(text, "переопределение должно иметь вид key=value")
    key, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_run_config(command, path=None, overrides=None):
    """
    Собирает конфигурацию запуска: значения по умолчанию, затем JSON-файл,
    затем переопределения из командной строки

    Args:
        command (str): regress, bandit, denoise или props
        path (str): JSON-документ с параметрами (необязателен)
        overrides (dict): Переопределения ключей

    Returns:
        Конфигурация команды (frozen dataclass)
    """
    if command not in RUN_CONFIGS:
        raise ConfigError('command', f"неизвестная команда {command!r}")
    cls = RUN_CONFIGS[command]
    values = {}
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as fh:
                document = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError('config', f"не удалось прочитать {path}: {e}")
        if not isinstance(document, dict):
            raise ConfigError('config', "ожидается JSON-объект")
        values.update(document)
    values.update(overrides or {})

    schema = {f.name: f.type for f in fields(cls)}
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(unknown[0], "неизвестный ключ")
    return cls(**{name: _coerce(name, schema[name], value) for name, value in values.items()})
