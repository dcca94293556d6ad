# 数据包初始化
