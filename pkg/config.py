# 周期谱方法能量守恒实验室 - 运行配置
# 根据机器硬件自动调整并行参数

import os
import multiprocessing

# 获取机器硬件信息
CPU_COUNT = multiprocessing.cpu_count()

# 并行配置
PARALLEL_RUNS = {
    # ν 扫描 / ε 扫描线程池大小: 不超过CPU核心数,最少2个
    'max_workers': int(os.getenv('SPECLAB_MAX_WORKERS', max(2, CPU_COUNT))),

    # scipy.fft 每次变换使用的线程数(按轴批次并行)
    'fft_workers': int(os.getenv('SPECLAB_FFT_WORKERS', max(1, CPU_COUNT // 2))),
}

# 乘子表缓存配置
CACHE_CONFIG = {
    # 内存中最多保留的乘子表数量
    'multiplier_maxsize': 64,

    # 乘子表有效期(小时), 表本身不会过期失效, 只为限制长时间运行的内存
    'multiplier_ttl_hours': 12,

    # 磁盘缓存目录, 为空时只用内存层
    'disk_dir': os.getenv('SPECLAB_CACHE_DIR', ''),
}

# 求解器默认参数
SOLVER_DEFAULTS = {
    'dt': 1e-3,
    'T': 1.0,
    'output_stride': 10,

    # CFL 条件 dt <= cfl_factor * h / max|v|
    'cfl_factor': 0.5,

    # 单步动能相对增长超过该值即中止
    'energy_growth_tol': 1e-6,

    # 非螺线输入的容忍度
    'divergence_tol': 1e-10,
}

# 光滑化核默认参数
MOLLIFIER_DEFAULTS = {
    'profile': 'bump',

    # 剖面在 r^2 >= 1 - guard 处截断为 0, 防止指数溢出
    'guard': 1e-14,

    # 径向 Gauss-Legendre 节点数(核的傅里叶变换)
    'radial_nodes': 256,

    # 求积路径: 每个 ε 半径内至少多少个格点步长
    'quadrature_steps_per_radius': 16,

    # ε < warn_factor * h 时告警, ε < refuse_factor * h 时拒绝
    'warn_factor': 4.0,
    'refuse_factor': 2.0,
}

# 判定阈值
TOLERANCES = {
    'round_trip': 1e-12,
    'divergence': 1e-10,
    'cet_identity': 1e-11,
    'trilinear': 1e-10,
    'psd': 1e-12,
    'unit_constant_slack': 5e-2,
    'stability_factor': 1.5,
    'flux_slope_slack': 0.15,
    'defect_slope_slack': 0.2,
    'energy_budget': 1e-6,
    'min_scaling_points': 4,
}
