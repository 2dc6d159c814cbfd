"""工具模块：日志、异常、配置、随机数流、数据解析与校验"""
