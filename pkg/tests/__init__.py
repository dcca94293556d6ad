"""
ORSI 显著性检测测试包
"""
