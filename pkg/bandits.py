"""
Контекстные бандиты: GLCB поверх G-GLN моделей наград, псевдо-счётчики
на полупространствах и синтетические среды.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from base_models import feature_experts
from constraints import ConstraintSet
from errors import ValidationError
from network import AGG_TOP, NetworkConfig, build_network, infer, infer_update

logger = logging.getLogger("GGLN.Bandits")


class BanditEnv:
    """
    Среда контекстного бандита

    Наследники задают n_actions, context_dim и функцию средних наград.
    """
    n_actions = 0
    context_dim = 0

    def sample_context(self, rng):
        raise NotImplementedError

    def mean_rewards(self, z):
        """Ожидаемые награды всех действий в контексте z"""
        raise NotImplementedError

    def noise_std(self):
        raise NotImplementedError

    def sample_reward(self, z, a, rng):
        return float(self.mean_rewards(z)[a] + self.noise_std() * rng.standard_normal())

    def optimal_reward(self, z):
        return float(np.max(self.mean_rewards(z)))

    def describe(self):
        return {'name': type(self).__name__}


@dataclass(frozen=True)
class WheelEnv(BanditEnv):
    """
    Колесо: контекст равномерен в единичном круге. Внутри радиуса δ лучшее
    действие: безопасное (0); снаружи лучшее действие зависит от квадранта
    (1–4). Награды делятся на reward_scale.
    """
    delta: float = 0.5
    mean_safe: float = 1.2
    mean_other: float = 1.0
    mean_large: float = 50.0
    noise: float = 0.01
    reward_scale: float = 12.5

    n_actions = 5
    context_dim = 2

    def sample_context(self, rng):
        radius = math.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([radius * math.cos(angle), radius * math.sin(angle)])

    def quadrant_action(self, z):
        if z[0] >= 0:
            return 1 if z[1] >= 0 else 2
        return 3 if z[1] < 0 else 4

    def mean_rewards(self, z):
        means = np.full(self.n_actions, self.mean_other)
        means[0] = self.mean_safe
        if np.linalg.norm(z) > self.delta:
            means[self.quadrant_action(z)] = self.mean_large
        return means / self.reward_scale

    def noise_std(self):
        return self.noise / self.reward_scale

    def describe(self):
        return {'name': 'wheel', 'delta': self.delta, 'mean_safe': self.mean_safe,
                'mean_other': self.mean_other, 'mean_large': self.mean_large,
                'noise': self.noise, 'reward_scale': self.reward_scale}


class LinearGaussianEnv(BanditEnv):
    """
    Линейная гауссова среда: награда z·θ_a + шум, z ~ N(0, I), θ_a ~ N(0, I/d)

    Args:
        n_actions (int): Число действий
        dim (int): Размерность контекста
        noise (float): Стандартное отклонение шума
        seed (int): Зерно для параметров θ
    """

    def __init__(self, n_actions=3, dim=4, noise=0.1, seed=0):
        self.n_actions = n_actions
        self.context_dim = dim
        self.noise = noise
        self.seed = seed
        self.theta = np.random.default_rng(seed).standard_normal((n_actions, dim)) / math.sqrt(dim)

    def sample_context(self, rng):
        return rng.standard_normal(self.context_dim)

    def mean_rewards(self, z):
        return self.theta @ z

    def noise_std(self):
        return self.noise

    def describe(self):
        return {'name': 'linear', 'n_actions': self.n_actions, 'dim': self.context_dim,
                'noise': self.noise, 'seed': self.seed}


class GLCBState:
    """
    Состояние GLCB: по сети G-GLN на действие, счётчики посещений ячеек
    контекста каждого нейрона и номер шага

    Args:
        nets (list): Сети по действиям
        bonus (float): Коэффициент бонуса исследования c >= 0
        sigma_fixed (float): Ширина экспертов по признакам контекста
    """

    def __init__(self, nets, bonus=1.0, sigma_fixed=1.0):
        if bonus < 0:
            raise ValidationError(f"коэффициент бонуса должен быть >= 0, получено {bonus}")
        self.nets = nets
        self.bonus = bonus
        self.sigma_fixed = sigma_fixed
        self.t = 1
        self.counters = [[np.zeros((layer.neurons, layer.cells), dtype=np.int64) for layer in net.layers]
                         for net in nets]
        self.updates = np.zeros(len(nets), dtype=np.int64)

    @classmethod
    def create(cls, env, bc, rng):
        """Сети для всех действий среды по конфигурации команды bandit"""
        constraints = ConstraintSet(w_max=bc.w_max, sigma2_min=bc.sigma2_min,
                                    sigma2_max=bc.sigma2_max, xi=bc.xi)
        cfg = NetworkConfig(layer_sizes=bc.layer_sizes, context_dim=bc.context_dim,
                            learning_rate=bc.learning_rate, side_dim=env.context_dim,
                            base_count=env.context_dim, bias_r=bc.bias_r, sigma2_bias=bc.sigma2_bias,
                            bias_scale=bc.bias_scale, constraints=constraints, aggregation=AGG_TOP)
        return cls([build_network(cfg, rng) for _ in range(env.n_actions)], bc.bonus, bc.sigma_fixed)

    @property
    def n_actions(self):
        return len(self.nets)

    def base_experts(self, z):
        return feature_experts(z, self.sigma_fixed)

    def active_cells(self, z, a):
        """Номера активных ячеек всех нейронов сети действия a, по слоям"""
        return [layer.gating.indices(z) for layer in self.nets[a].layers]


def pseudo_count(state, z, a):
    """
    Псевдо-счётчик N̂(z, a): среднее по всем нейронам сети действия a
    числа посещений активной в z ячейки
    """
    counts = [c[np.arange(c.shape[0]), idx] for c, idx in zip(state.counters[a], state.active_cells(z, a))]
    return float(np.concatenate(counts).mean())


def glcb_scores(means, counts, t, c):
    """
    Оценки μ̂_a + c·√(log t / N̂_a); при N̂ = 0 бонус бесконечен, при c = 0 равен 0
    """
    means = np.asarray(means, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if c == 0:
        return means.copy()
    with np.errstate(divide='ignore'):
        bonus = np.where(counts > 0, c * np.sqrt(math.log(t) / np.where(counts > 0, counts, 1.0)), np.inf)
    return means + bonus


def glcb_select(state, z):
    """
    Действие с максимальной оценкой GLCB; при равенстве: с меньшим номером

    Returns:
        int: Номер действия
    """
    if state.t < 1:
        raise ValidationError(f"номер шага должен быть >= 1, получено {state.t}")
    base = state.base_experts(z)
    means = [infer(net, base, z).mean for net in state.nets]
    counts = [pseudo_count(state, z, a) for a in range(state.n_actions)]
    return int(np.argmax(glcb_scores(means, counts, state.t, state.bonus)))


def observe(state, z, a, reward):
    """Одно обновление сети выбранного действия и счётчиков его активных ячеек"""
    cells = state.active_cells(z, a)
    infer_update(state.nets[a], state.base_experts(z), z, reward)
    for counter, idx in zip(state.counters[a], cells):
        counter[np.arange(counter.shape[0]), idx] += 1
    state.updates[a] += 1
    state.t += 1


@dataclass
class BanditTrace:
    """Пошаговая запись прогона бандита"""
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    pseudo_counts: list = field(default_factory=list)
    regret: list = field(default_factory=list)

    @property
    def cumulative_reward(self):
        return float(np.sum(self.rewards))

    def steps(self):
        return [{'step': i + 1, 'action': a, 'reward': r, 'pseudo_count': pc, 'regret': g}
                for i, (a, r, pc, g) in enumerate(zip(self.actions, self.rewards, self.pseudo_counts, self.regret))]


def run_bandit(env, state, T, rng):
    """
    Онлайн-прогон: контекст, выбор действия, награда, одно обновление сети
    выбранного действия; без буфера воспроизведения

    Returns:
        BanditTrace: Действия, награды, псевдо-счётчики и накопленное сожаление
    """
    trace = BanditTrace()
    regret = 0.0
    for _ in range(T):
        z = env.sample_context(rng)
        a = glcb_select(state, z)
        pc = pseudo_count(state, z, a)
        reward = env.sample_reward(z, a, rng)
        observe(state, z, a, reward)
        regret += max(env.optimal_reward(z) - env.mean_rewards(z)[a], 0.0)
        trace.actions.append(a)
        trace.rewards.append(reward)
        trace.pseudo_counts.append(pc)
        trace.regret.append(regret)
    return trace


def make_env(bc, seed):
    """Среда по конфигурации команды bandit"""
    if bc.env == 'wheel':
        return WheelEnv(bc.wheel_delta, bc.wheel_mean_safe, bc.wheel_mean_other,
                        bc.wheel_mean_large, bc.wheel_noise, bc.reward_scale)
    return LinearGaussianEnv(bc.linear_actions, bc.linear_dim, bc.linear_noise, seed)


def run_bandit_seed(bc, seed):
    """
    Полностью изолированный прогон одного зерна

    Returns:
        dict: Трасса для записи в JSON
    """
    rng = np.random.default_rng(seed)
    env = make_env(bc, seed)
    state = GLCBState.create(env, bc, rng)
    trace = run_bandit(env, state, bc.horizon, rng)
    logger.info(f"Бандит, зерно {seed}: суммарная награда {trace.cumulative_reward:.3f}, "
                f"сожаление {trace.regret[-1]:.3f}")
    return {
        'seed': seed,
        'env': env.describe(),
        'config': bc.to_dict(),
        'cumulative_reward': trace.cumulative_reward,
        'final_regret': trace.regret[-1],
        'updates_per_action': state.updates.tolist(),
        'steps': trace.steps(),
    }
