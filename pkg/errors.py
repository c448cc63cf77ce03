"""
Иерархия исключений G-GLN.

Библиотечные модули только выбрасывают исключения; перехват и логирование
выполняются в cli.py и app.py.
"""


class GGLNError(Exception):
    """Базовое исключение для всех ошибок движка"""


class ValidationError(GGLNError, ValueError):
    """Некорректные входные данные: нечисловые значения, формы, смешение видов экспертов"""


class DegenerateProductError(GGLNError, ArithmeticError):
    """
    Вырожденное произведение гауссиан (нулевые веса или сингулярная точность)

    Args:
        message (str): Текст ошибки
        layer (int): Номер слоя (если известен)
        neuron (int): Номер нейрона в слое (если известен)
    """

    def __init__(self, message, layer=None, neuron=None):
        self.layer = layer
        self.neuron = neuron
        if layer is not None:
            message = f"слой {layer}, нейрон {neuron}: {message}"
        super().__init__(message)


class InfeasibleBarrierError(GGLNError, ArithmeticError):
    """Барьерная функция вычислена вне допустимого множества"""


class DegenerateFeasibilityError(GGLNError, ArithmeticError):
    """Проекция обнулила все веса"""


class ZeroDensityError(GGLNError, ArithmeticError):
    """Плотность смеси при switching-агрегации равна нулю"""


class DataFormatError(GGLNError, ValueError):
    """Ошибка формата входного файла или пустой набор данных"""


class ConfigError(GGLNError, ValueError):
    """
    Нарушение схемы конфигурации запуска

    Args:
        field (str): Имя поля конфигурации
        message (str): Описание нарушения
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
