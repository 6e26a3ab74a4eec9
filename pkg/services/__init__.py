# 实验编排模块
