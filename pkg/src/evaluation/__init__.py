# 评估包初始化
