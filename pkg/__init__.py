# G-GLN - гауссовы сети с гейтингом для онлайн-регрессии,
# контекстных бандитов и оценки плотности через шумоподавление
#
# Версия: 0.1.0

__version__ = '0.1.0'
