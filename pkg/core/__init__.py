# 谱方法能量守恒实验室核心模块
