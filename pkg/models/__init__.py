# 结果持久化模块
