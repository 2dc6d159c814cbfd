"""模型模块：稳定分布、核基、依赖树、指数函数与精确模拟"""
