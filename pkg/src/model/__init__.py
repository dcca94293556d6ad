# 模型包初始化
