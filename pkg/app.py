#!/usr/bin/env python3
"""
speclab - 周期谱方法能量守恒实验室 命令行入口

子命令: exponents, mollify, besov, commutator-check, flux-scaling,
        gradient-scaling, solve, sweep, plot
退出码: 0 通过/完成, 2 判定失败, 1 出错
"""

import json
import logging
import os
import sys
import threading
import traceback
from functools import wraps


# 全局异常处理器
def handle_exception(exc_type, exc_value, exc_traceback):
    """全局异常处理器"""
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return

    print("\n" + "=" * 60, file=sys.stderr)
    print("[全局异常捕获] 未捕获的异常:", file=sys.stderr)
    print(f"类型: {exc_type.__name__}", file=sys.stderr)
    print(f"值: {exc_value}", file=sys.stderr)
    print("\n追踪信息:", file=sys.stderr)
    traceback.print_exception(exc_type, exc_value, exc_traceback, file=sys.stderr)
    print("=" * 60 + "\n", file=sys.stderr)


sys.excepthook = handle_exception


# 线程异常处理器(扫描的工作线程)
def handle_thread_exception(args):
    """线程异常处理器"""
    print("\n" + "=" * 60, file=sys.stderr)
    print(f"[线程异常] 线程名称: {args.thread.name}", file=sys.stderr)
    print(f"异常类型: {type(args.exc_value).__name__}", file=sys.stderr)
    print(f"异常值: {args.exc_value}", file=sys.stderr)
    print("=" * 60 + "\n", file=sys.stderr)


threading.excepthook = handle_thread_exception

base_dir = os.path.dirname(os.path.abspath(__file__))
if base_dir not in sys.path:
    sys.path.insert(0, base_dir)

import click

from core.besov import SyntheticFieldSpec, besov_seminorm, make_synthetic_field
from core.commutator import cet_decompose, flux_terms, psd_violation
from core.exponents import thm1_parameters, thm2_parameters, thm3_rates
from core.field import GridSpec
from core.mollify import MollifierKernel, quadrature_discrepancy, verify_convolution_bounds
from core.solver import SolverAbort, SolverConfig, initial_field, run
from models.storage import (
    BESOV_COLUMNS, BUDGET_COLUMNS, FLUX_COLUMNS, SWEEP_COLUMNS,
    load_config, to_jsonable, write_csv, write_json_report, write_snapshot,
)
from services.experiments import (
    FieldSpec, SweepConfig, build_field, run_flux_scaling, run_gradient_scaling,
    run_viscosity_sweep, verdict_exit_code,
)
from services.plots import emit_plots
from utils.fitting import FAIL

try:
    from config import TOLERANCES
except ImportError:
    TOLERANCES = {'cet_identity': 1e-11, 'trilinear': 1e-10, 'psd': 1e-12}

logger = logging.getLogger('speclab')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAIL = 2


def _float_list(text):
    if text is None:
        return None
    return [float(x) for x in str(text).replace(' ', '').split(',') if x]


def cli_command(func):
    """异常在命令边界统一捕获并以退出码 1 结束"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            code = func(*args, **kwargs)
        except SolverAbort as e:
            click.echo(f"[错误] 求解器中止(第 {e.step} 步): {e.reason}", err=True)
            sys.exit(EXIT_ERROR)
        except (ValueError, OSError) as e:
            click.echo(f"[错误] {e}", err=True)
            sys.exit(EXIT_ERROR)
        sys.exit(code or EXIT_OK)
    return wrapper


def _echo_json(data):
    click.echo(json.dumps(to_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False))


def _field_spec(family, n, seed, beta, slope, k_min, k_max, amplitude, path=None):
    synthetic = SyntheticFieldSpec(target_beta=beta, spectral_slope=slope, seed=seed,
                                   k_min=k_min, k_max=k_max)
    return FieldSpec(family=family, n=n, amplitude=amplitude, synthetic=synthetic, path=path)


_field_options = [
    click.option('--family', default='synthetic',
                 type=click.Choice(['synthetic', 'taylor_green', 'evolved_taylor_green', 'shear', 'snapshot'])),
    click.option('--n', 'n', default=32, show_default=True, help='每轴网格点数'),
    click.option('--seed', default=0, show_default=True),
    click.option('--field-beta', default=0.5, show_default=True, help='合成场目标正则性'),
    click.option('--slope', default=None, type=float, help='合成场谱斜率 s (默认 2β+1)'),
    click.option('--k-min', default=1, show_default=True),
    click.option('--k-max', default=None, type=int),
    click.option('--amplitude', default=1.0, show_default=True),
    click.option('--snapshot', 'snapshot_path', default=None, help='family=snapshot 时的快照路径'),
]


def field_options(func):
    for option in reversed(_field_options):
        func = option(func)
    return func


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='输出 INFO 日志')
def cli(verbose):
    """周期谱方法能量守恒实验室"""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


# ==================== exponents ====================

@cli.command()
@click.option('--alpha', type=float, default=None)
@click.option('--beta', type=float, default=None)
@click.option('--q', type=float, default=None)
@click.option('--p', type=float, default=None)
@click.option('--json', 'as_json', is_flag=True, help='JSON 输出')
@cli_command
def exponents(alpha, beta, q, p, as_json):
    """打印三个定理的指数表"""
    result = {}
    if alpha is not None and beta is not None:
        result['thm1'] = thm1_parameters(alpha, beta).as_dict()
        result['thm3'] = thm3_rates(alpha, beta).as_dict()
    if q is not None:
        result['thm2'] = thm2_parameters(q, p).as_dict()
    if not result:
        raise ValueError("give --alpha and --beta, or --q")

    if as_json:
        _echo_json(result)
        return EXIT_OK
    for section, values in result.items():
        click.echo(f"[{section}]")
        for key, value in values.items():
            click.echo(f"  {key:<26} {value}")
    return EXIT_OK


# ==================== mollify ====================

@cli.command()
@field_options
@click.option('--beta', default=0.5, show_default=True)
@click.option('--q', default=2.0, show_default=True)
@click.option('--eps-list', default='0.8,0.6,0.5', show_default=True)
@click.option('--r', default=None, type=float, help='conv7 目标指数(默认 2q)')
@click.option('--profile', default=None, help='径向剖面采样 JSON 文件 {"r": [...], "values": [...]}')
@cli_command
def mollify(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path,
            beta, q, eps_list, r, profile):
    """卷积不等式核验与两条光滑化路径的差异"""
    kernel = None
    if profile:
        with open(profile, encoding='utf-8') as f:
            table = json.load(f)
        kernel = MollifierKernel((table['r'], table['values']))
    field = build_field(_field_spec(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path))
    eps_values = _float_list(eps_list)
    report = verify_convolution_bounds(field, beta, q, eps_values, kernel, r)
    report['quadrature_discrepancy'] = {eps: quadrature_discrepancy(field, eps, kernel) for eps in eps_values}
    _echo_json(report)
    return EXIT_OK if report['all_unit_ok'] else EXIT_FAIL


# ==================== besov ====================

@cli.command()
@field_options
@click.option('--beta', default=0.5, show_default=True)
@click.option('--q', default=2.0, show_default=True)
@click.option('--csv', 'csv_path', default=None, help='追加 CSV 行')
@cli_command
def besov(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path, beta, q, csv_path):
    """采样 Besov 半范数"""
    field = build_field(_field_spec(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path))
    estimate = besov_seminorm(field, beta, q)
    row = estimate.as_row()
    if csv_path:
        write_csv(csv_path, BESOV_COLUMNS, [row], append=True)
    _echo_json({**row, 'notes': estimate.notes})
    return EXIT_OK


# ==================== commutator-check ====================

@cli.command('commutator-check')
@click.option('--n', 'n', default=32, show_default=True)
@click.option('--fields', 'count', default=20, show_default=True, help='随机场个数')
@click.option('--eps-list', default='0.5,0.25,0.125', show_default=True)
@click.option('--seed', default=0, show_default=True)
@click.option('--csv', 'csv_path', default=None)
@cli_command
def commutator_check(n, count, eps_list, seed, csv_path):
    """交换子恒等式、半正定性与三线性项在随机带限场上的检查"""
    grid = GridSpec(n)
    eps_values = _float_list(eps_list)
    rows, failures, skipped = [], 0, []
    for index in range(count):
        field = make_synthetic_field(grid, SyntheticFieldSpec(seed=seed + index))
        for eps in eps_values:
            try:
                bundle = cet_decompose(field, eps)
            except ValueError as e:
                skipped.append(f"eps={eps}: {e}")
                continue
            report = flux_terms(field, eps, bundle=bundle)
            ok = (bundle.relative_residual <= TOLERANCES['cet_identity']
                  and psd_violation(bundle) >= -TOLERANCES['psd']
                  and abs(report.trilinear) <= TOLERANCES['trilinear'] * max(report.trilinear_scale, 1e-300))
            failures += 0 if ok else 1
            rows.append({**report.as_row(), 'relative_residual': bundle.relative_residual,
                         'seed': seed + index, 'ok': ok})
    if csv_path:
        write_csv(csv_path, FLUX_COLUMNS, rows)
    summary = {
        'checked': len(rows),
        'failures': failures,
        'max_relative_residual': max((r['relative_residual'] for r in rows), default=0.0),
        'skipped': sorted(set(skipped)),
    }
    _echo_json(summary)
    return EXIT_FAIL if failures else EXIT_OK


# ==================== flux-scaling / gradient-scaling ====================

@cli.command('flux-scaling')
@field_options
@click.option('--alpha', default=0.4, show_default=True)
@click.option('--beta', default=0.5, show_default=True)
@click.option('--eps-list', default='0.8,0.6,0.5,0.4', show_default=True)
@click.option('--csv', 'csv_path', default=None)
@click.option('--report', 'report_path', default=None, help='JSON 报告路径')
@cli_command
def flux_scaling_command(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path,
                         alpha, beta, eps_list, csv_path, report_path):
    """I1+I2 随 ε 的标度"""
    spec = _field_spec(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path)
    report = run_flux_scaling(alpha, beta, spec, _float_list(eps_list))
    if csv_path:
        write_csv(csv_path, FLUX_COLUMNS, report['rows'])
    if report_path:
        write_json_report(report_path, {'alpha': alpha, 'beta': beta, 'field': spec}, report['rows'],
                          {'slope': report['slope'], 'r2': report.get('r2')}, {'flux': report['verdict']})
    _echo_json({k: v for k, v in report.items() if k != 'rows'})
    return verdict_exit_code(report['verdict'])


@cli.command('gradient-scaling')
@field_options
@click.option('--q', default=3.0, show_default=True)
@click.option('--eps-list', default='0.8,0.6,0.5,0.4', show_default=True)
@click.option('--csv', 'csv_path', default=None)
@cli_command
def gradient_scaling_command(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path,
                             q, eps_list, csv_path):
    """I1 随 ε 的标度(梯度条件)"""
    spec = _field_spec(family, n, seed, field_beta, slope, k_min, k_max, amplitude, snapshot_path)
    report = run_gradient_scaling(q, spec, _float_list(eps_list))
    if csv_path:
        write_csv(csv_path, FLUX_COLUMNS, report['rows'])
    _echo_json({k: v for k, v in report.items() if k != 'rows'})
    return verdict_exit_code(report['verdict'])


# ==================== solve ====================

@cli.command()
@click.option('--config', 'config_path', default=None, help='JSON 运行配置')
@click.option('--n', 'n', type=int, default=None)
@click.option('--nu', type=float, default=None)
@click.option('--dt', type=float, default=None)
@click.option('--T', 'T', type=float, default=None)
@click.option('--init', type=click.Choice(['taylor_green', 'synthetic', 'shear']), default=None)
@click.option('--seed', type=int, default=None)
@click.option('--output-stride', type=int, default=None)
@click.option('--snapshots', default=None, help='快照目录')
@click.option('--budget', 'budget_path', default=None, help='能量收支 CSV')
@cli_command
def solve(config_path, n, nu, dt, T, init, seed, output_stride, snapshots, budget_path):
    """推进 Navier-Stokes/Euler 并输出快照与能量收支"""
    config = load_config(config_path, {
        'grid': n, 'nu': nu, 'dt': dt, 'T': T, 'init': init, 'seed': seed, 'output_stride': output_stride,
    })
    outputs = config.get('outputs', {})
    snapshots = snapshots or outputs.get('snapshots')
    budget_path = budget_path or outputs.get('budget')

    grid = GridSpec(int(config.get('grid', 32)))
    synthetic = SyntheticFieldSpec.from_dict({**config.get('synthetic', {}), 'seed': config.get('seed', 0)})
    v0 = initial_field(grid, config.get('init', 'taylor_green'), float(config.get('amplitude', 1.0)), synthetic)
    trajectory = run(v0, SolverConfig.from_dict(config))

    if snapshots:
        for index, (t, field) in enumerate(trajectory.samples()):
            write_snapshot(os.path.join(snapshots, f"v_{index:05d}.bin"), field)
    if budget_path:
        write_csv(budget_path, BUDGET_COLUMNS, trajectory.budget.rows())

    budget = trajectory.budget
    _echo_json({
        'steps': trajectory.config.n_steps,
        'samples': len(trajectory.times),
        'initial_kinetic': budget.initial_kinetic,
        'final_kinetic': budget.samples[-1].kinetic,
        'max_relative_residual': budget.max_relative_residual,
        'energy_inequality': budget.energy_inequality_holds(),
        'initial_attainment': trajectory.initial_attainment,
    })
    return EXIT_OK


# ==================== sweep ====================

@cli.command()
@click.option('--config', 'config_path', required=True, help='JSON 扫描配置')
@click.option('--n', 'n', type=int, default=None)
@click.option('--dt', type=float, default=None)
@click.option('--T', 'T', type=float, default=None)
@click.option('--nu-list', default=None)
@click.option('--coupling', default=None, help="'auto' | 'low' | 'high' | 数值指数")
@click.option('--csv', 'csv_path', default=None)
@click.option('--report', 'report_path', default=None)
@cli_command
def sweep(config_path, n, dt, T, nu_list, coupling, csv_path, report_path):
    """消失黏性扫描"""
    if coupling is not None and coupling not in ('auto', 'low', 'high'):
        coupling = float(coupling)
    data = load_config(config_path, {
        'n': n, 'dt': dt, 'T': T, 'nu_list': _float_list(nu_list), 'coupling': coupling,
    })
    outputs = data.pop('outputs', {})
    config = SweepConfig.from_dict(data)
    result = run_viscosity_sweep(config)

    click.echo(f"[扫描] 预测亏损指数 defect_exponent = {result.rates['defect_exponent']:.6g} "
               f"(branch={result.rates['branch']}), eps 指数 = {result.coupling_exponent:.6g}")
    csv_path = csv_path or outputs.get('csv')
    report_path = report_path or outputs.get('report')
    if csv_path:
        write_csv(csv_path, SWEEP_COLUMNS, result.rows)
    if report_path:
        write_json_report(report_path, config.as_dict(), result.rows, result.fit, result.verdicts,
                          extra={'rates': result.rates, 'notes': result.notes,
                                 'max_time_norm': result.max_time_norm})
    _echo_json({'fit': result.fit, 'verdicts': result.verdicts, 'notes': result.notes,
                'max_time_norm': result.max_time_norm})
    return EXIT_FAIL if result.verdicts['overall'] == FAIL else EXIT_OK


# ==================== plot ====================

@cli.command()
@click.option('--sweep-csv', default=None)
@click.option('--flux-csv', default=None)
@click.option('--defect-slope', 'defect_slopes', multiple=True, type=float, help='参考亏损斜率')
@click.option('--flux-slope', 'flux_slopes', multiple=True, type=float, help='参考能流斜率')
@click.option('--image', default='scaling.png', show_default=True)
@click.option('--out', 'out_path', default=None, help='脚本输出路径(默认打印)')
@cli_command
def plot(sweep_csv, flux_csv, defect_slopes, flux_slopes, image, out_path):
    """生成 gnuplot 脚本"""
    script = emit_plots(
        sweep_csv=sweep_csv,
        flux_csv=flux_csv,
        defect_slopes={f"ref{i + 1}": s for i, s in enumerate(defect_slopes)},
        flux_slopes={f"ref{i + 1}": s for i, s in enumerate(flux_slopes)},
        output=image,
    )
    if out_path:
        with open(out_path, 'w', encoding='utf-8') as f:
            f.write(script)
    else:
        click.echo(script, nl=False)
    return EXIT_OK


if __name__ == '__main__':
    cli()
