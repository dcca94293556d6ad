# ORSI 显著性检测包初始化

__version__ = '1.0.0'
