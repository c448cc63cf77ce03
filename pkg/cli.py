import argparse
import json
import logging
import os
import sys

from joblib import Parallel, delayed
from tabulate import tabulate

from config import RESULTS_DIR, load_run_config, parse_override
from errors import ConfigError, GGLNError

logger = logging.getLogger("GGLN.CLI")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _add_common(parser, jobs=True):
    parser.add_argument('-c', '--config', help='JSON-документ с параметрами запуска')
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='Переопределить ключ конфигурации (значение в формате JSON)')
    parser.add_argument('--emit-config', action='store_true', help='Напечатать итоговую конфигурацию и выйти')
    parser.add_argument('-o', '--output', help='Путь для результатов')
    if jobs:
        parser.add_argument('-j', '--jobs', type=int, help='Число параллельных зёрен (-1: все ядра)')
        parser.add_argument('--seeds', type=int, nargs='+', help='Зёрна запусков')


def parse_args(argv=None):
    """
    Парсинг аргументов командной строки

    Returns:
        argparse.Namespace: Аргументы командной строки
    """
    parser = argparse.ArgumentParser(description='G-GLN - гауссовы сети с гейтингом для регрессии и оценки плотности')

    subparsers = parser.add_subparsers(dest='command', help='Команды')

    # Регрессионный бенчмарк
    regress_parser = subparsers.add_parser('regress', help='Регрессия на табличных данных')
    _add_common(regress_parser)
    regress_parser.add_argument('-d', '--dataset', help='CSV-файл или синтетический набор (linear, heteroskedastic)')
    regress_parser.add_argument('-e', '--epochs', type=int, help='Число эпох')
    regress_parser.add_argument('--sweep', action='store_true', help='Перебор (η, s) по сетке')

    # Контекстные бандиты
    bandit_parser = subparsers.add_parser('bandit', help='Симуляция GLCB')
    _add_common(bandit_parser)
    bandit_parser.add_argument('-T', '--horizon', type=int, help='Число шагов')

    # Шумоподавление
    denoise_parser = subparsers.add_parser('denoise', help='Шумоподавление, дорисовка и HMC')
    _add_common(denoise_parser)
    denoise_parser.add_argument('-d', '--dataset', help='swiss_roll или файл изображений IDX')

    # Проверка свойств
    props_parser = subparsers.add_parser('props', help='Проверка свойств движка')
    _add_common(props_parser, jobs=False)
    props_parser.add_argument('-s', '--suites', nargs='+', help='Наборы свойств')

    return parser.parse_args(argv)


def collect_overrides(args):
    """Переопределения из --set и отдельных флагов; флаги важнее --set"""
    overrides = dict(parse_override(item) for item in args.overrides)
    for flag, key in (('jobs', 'jobs'), ('seeds', 'seeds'), ('output', 'output'), ('dataset', 'dataset'),
                      ('epochs', 'epochs'), ('horizon', 'horizon'), ('suites', 'suites')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, 'sweep', False):
        overrides['sweep'] = True
    return overrides


def handle_regress_command(rc):
    """
    Обрабатывает команду 'regress'

    Args:
        rc (RegressConfig): Конфигурация
    """
    from benchmark import default_output, run_regression, write_json

    results = run_regression(rc, show_progress=sys.stdout.isatty())
    path = rc.output or default_output(f"regress_{results['dataset']}.json")
    write_json(results, path)

    print(f"\nРегрессия на {results['dataset']} завершена.")
    table = [[c['learning_rate'], c['context_dim'], f"{c['rmse']['mean']:.4f} ± {c['rmse']['stderr']:.4f}",
              f"{c['nll']['mean']:.4f} ± {c['nll']['stderr']:.4f}"] for c in results['configs']]
    print(tabulate(table, headers=['η', 's', 'RMSE', 'NLL'], tablefmt='psql'))
    best = results['best']
    print(f"Лучшая конфигурация: η={best['learning_rate']}, s={best['context_dim']}, "
          f"RMSE {best['rmse']['mean']:.4f}")
    return EXIT_OK


def handle_bandit_command(bc):
    """
    Обрабатывает команду 'bandit'

    Args:
        bc (BanditConfig): Конфигурация
    """
    from bandits import run_bandit_seed
    from benchmark import write_json

    traces = Parallel(n_jobs=bc.jobs)(delayed(run_bandit_seed)(bc, seed) for seed in bc.seeds)
    directory = bc.output or os.path.join(RESULTS_DIR, 'bandit')
    for trace in traces:
        write_json(trace, os.path.join(directory, f"bandit_seed{trace['seed']}.json"))

    print(f"\nСимуляция бандита ({bc.env}) завершена.")
    table = [[t['seed'], f"{t['cumulative_reward']:.3f}", f"{t['final_regret']:.3f}"] for t in traces]
    print(tabulate(table, headers=['Зерно', 'Награда', 'Сожаление'], tablefmt='psql'))
    return EXIT_OK


def handle_denoise_command(dc):
    """
    Обрабатывает команду 'denoise'

    Args:
        dc (DenoiseConfig): Конфигурация
    """
    from benchmark import write_json
    from denoising import run_denoise_seed, write_jsonl

    outputs = Parallel(n_jobs=dc.jobs)(delayed(run_denoise_seed)(dc, seed) for seed in dc.seeds)
    directory = dc.output or os.path.join(RESULTS_DIR, 'denoise')
    summaries = []
    for summary, records in outputs:
        write_jsonl(records, os.path.join(directory, f"denoise_seed{summary['seed']}.jsonl"))
        summaries.append(summary)
    write_json({'command': 'denoise', 'config': dc.to_dict(), 'seeds': summaries},
               os.path.join(directory, 'summary.json'))

    print(f"\nШумоподавление ({dc.dataset}) завершено.")
    if dc.dataset == 'swiss_roll':
        table = [[s['seed'], f"{s['initial_distance']:.4f}", f"{s['final_distance']:.4f}",
                  f"{s['reduction']:.2f}x"] for s in summaries]
        print(tabulate(table, headers=['Зерно', 'До', 'После', 'Снижение'], tablefmt='psql'))
    return EXIT_OK


def handle_props_command(pc):
    """
    Обрабатывает команду 'props'

    Args:
        pc (PropsConfig): Конфигурация
    """
    from benchmark import write_json
    from props import run_props

    ok, rows = run_props(pc)
    if pc.output:
        write_json({'command': 'props', 'passed': ok, 'suites': rows}, pc.output)
    print("\nВсе наборы свойств пройдены." if ok else "\nНекоторые наборы свойств не пройдены.")
    return EXIT_OK if ok else EXIT_FAILED


HANDLERS = {
    'regress': handle_regress_command,
    'bandit': handle_bandit_command,
    'denoise': handle_denoise_command,
    'props': handle_props_command,
}


def process_command(args):
    """
    Обрабатывает команду из командной строки

    Args:
        args: Аргументы командной строки

    Returns:
        int: Код завершения (0: успех, 1: ошибка выполнения, 2: ошибка конфигурации)
    """
    if args.command not in HANDLERS:
        print("Команда не указана. Используйте --help для получения справки.")
        return EXIT_CONFIG
    try:
        run_config = load_run_config(args.command, args.config, collect_overrides(args))
    except ConfigError as e:
        logger.error(f"Ошибка конфигурации: {e}")
        return EXIT_CONFIG

    if args.emit_config:
        print(json.dumps(run_config.to_dict(), indent=2, ensure_ascii=False))
        return EXIT_OK

    try:
        return HANDLERS[args.command](run_config)
    except (GGLNError, OSError) as e:
        logger.error(f"Команда {args.command} завершилась с ошибкой: {e}")
        return EXIT_FAILED
