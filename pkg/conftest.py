import pytest


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='запускать медленные статистические и приёмочные тесты')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: медленный статистический или приёмочный тест')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='нужен флаг --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
