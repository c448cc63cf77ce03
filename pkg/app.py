#!/usr/bin/env python3
"""
G-GLN - гауссовы сети с гейтингом: онлайн-регрессия, контекстные бандиты
и оценка плотности через шумоподавление

Этот файл является точкой входа в приложение.
"""

import logging
import sys

from config import LOG_FILE

# Настройка логирования
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(LOG_FILE),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("GGLN")


def main(argv=None):
    """
    Основная функция для запуска приложения из командной строки
    """
    from cli import parse_args, process_command

    args = parse_args(argv)
    return process_command(args)


if __name__ == '__main__':
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Приложение завершено пользователем")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Произошла ошибка: {e}", exc_info=True)
        sys.exit(1)
