"""推断模块：GEV 边缘拟合、MH-MCMC 与链诊断"""
