#!/usr/bin/env python3
"""
求解器测试 - 右端项、精确解、能量收支与中止条件
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.besov import SyntheticFieldSpec
from core.commutator import galilean_offset
from core.field import GridSpec, PhysicalField, divergence, lebesgue_norm, mean, to_physical
from core.solver import (
    SolverAbort, SolverConfig, initial_field, l2_distance, random_leray_hopf_data, rhs, run,
    shear_flow, taylor_green,
)


class TestSolverConfig:
    """求解器参数校验"""

    def test_defaults(self):
        config = SolverConfig(nu=0.01, dt=0.01, T=1.0)
        assert config.n_steps == 100

    def test_rejects_negative_viscosity(self):
        with pytest.raises(ValueError):
            SolverConfig(nu=-1e-3)

    def test_rejects_incommensurate_T(self):
        with pytest.raises(ValueError):
            SolverConfig(dt=0.03, T=1.0)

    def test_dealias_mandatory(self):
        with pytest.raises(ValueError):
            SolverConfig(dealias=False)

    def test_from_dict_ignores_unknown_keys(self):
        config = SolverConfig.from_dict({'nu': 0.02, 'dt': 0.01, 'T': 0.5, 'grid': 32, 'output_stride': '5'})
        assert config.nu == 0.02
        assert config.output_stride == 5


class TestRhs:
    """右端项测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_zero_field(self):
        F = rhs(PhysicalField.zeros(self.grid), 0.1)
        assert np.max(np.abs(F.coefficients)) == 0.0

    def test_shear_flow_is_pure_diffusion(self):
        """(sin x2, 0, 0): 非线性项为零, 右端 = -ν v"""
        v = shear_flow(self.grid)
        out = to_physical(rhs(v, 0.1))
        assert np.max(np.abs(out.values + 0.1 * v.values)) < 1e-13

    def test_output_divergence_free(self):
        v = taylor_green(self.grid)
        out = rhs(v, 0.05)
        assert np.max(np.abs(divergence(out).coefficients)) < 1e-13

    def test_matches_one_step_difference(self):
        """单个小步长的差商逼近右端项"""
        v0 = random_leray_hopf_data(self.grid, SyntheticFieldSpec(seed=3))
        dt = 1e-4
        trajectory = run(v0, SolverConfig(nu=0.05, dt=dt, T=dt, output_stride=1))
        difference = (trajectory.final.values - v0.values) / dt
        expected = to_physical(rhs(v0, 0.05))
        assert np.max(np.abs(difference - expected.values)) <= 1e-3 * max(1.0, expected.scale)

    def test_rejects_non_solenoidal(self):
        v = PhysicalField.from_function(self.grid, lambda x, y, z: np.stack(
            [np.sin(x), np.zeros_like(x), np.zeros_like(x)]))
        with pytest.raises(ValueError):
            rhs(v, 0.0)


class TestInitialData:
    """初值测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_taylor_green_properties(self):
        """无散、零均值、动能 A²π³"""
        v = taylor_green(self.grid, amplitude=2.0)
        assert np.max(np.abs(divergence(v).values)) < 1e-13
        assert np.max(np.abs(mean(v))) < 1e-15
        assert math.isclose(0.5 * lebesgue_norm(v, 2) ** 2, 4.0 * math.pi ** 3, rel_tol=1e-12)

    def test_random_data_reproducible(self):
        spec = SyntheticFieldSpec(seed=12)
        a = random_leray_hopf_data(self.grid, spec)
        b = random_leray_hopf_data(self.grid, spec)
        assert np.array_equal(a.values, b.values)

    def test_unknown_init(self):
        with pytest.raises(ValueError):
            initial_field(self.grid, 'vortex_ring')


class TestRun:
    """时间推进测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_shear_flow_exact_decay(self):
        """剪切流精确解 e^{-νt}(sin x2, 0, 0)"""
        v0 = shear_flow(self.grid)
        trajectory = run(v0, SolverConfig(nu=0.1, dt=1e-3, T=1.0, output_stride=250))
        error = np.max(np.abs(trajectory.final.values - math.exp(-0.1) * v0.values))
        assert error <= 1e-8
        assert trajectory.times[-1] == pytest.approx(1.0)
        assert len(trajectory.times) == 5

    def test_budget_residual_converges_with_dt(self):
        """步长减半, 收支残差至少降 8 倍"""
        v0 = taylor_green(self.grid)
        coarse = run(v0, SolverConfig(nu=0.1, dt=0.04, T=1.0, output_stride=5)).budget.max_relative_residual
        fine = run(v0, SolverConfig(nu=0.1, dt=0.02, T=1.0, output_stride=5)).budget.max_relative_residual
        assert coarse > 1e-13
        assert coarse / max(fine, 1e-300) >= 8.0

    def test_zero_initial_datum(self):
        trajectory = run(PhysicalField.zeros(self.grid), SolverConfig(nu=0.1, dt=0.01, T=0.1))
        assert all(np.max(np.abs(f.values)) == 0.0 for f in trajectory.fields)

    def test_euler_conserves_energy(self):
        grid = GridSpec(32)
        trajectory = run(taylor_green(grid), SolverConfig(nu=0.0, dt=0.01, T=1.0, output_stride=10))
        assert trajectory.budget.max_relative_residual <= 1e-6
        assert all(s.dissipation_cum == 0.0 for s in trajectory.budget.samples)

    def test_navier_stokes_budget(self):
        """½||v||² + ν∫||∇v||² = ½||v0||²"""
        grid = GridSpec(32)
        trajectory = run(taylor_green(grid), SolverConfig(nu=1e-2, dt=0.01, T=1.0, output_stride=10))
        budget = trajectory.budget
        assert budget.max_relative_residual <= 1e-6
        assert budget.energy_inequality_holds()
        assert budget.samples[-1].kinetic < budget.initial_kinetic

    def test_samples_divergence_free_and_mean_zero(self):
        v0 = random_leray_hopf_data(self.grid, SyntheticFieldSpec(seed=1))
        trajectory = run(v0, SolverConfig(nu=1e-2, dt=0.01, T=0.2, output_stride=5))
        for field in trajectory.fields:
            assert np.max(np.abs(divergence(field).values)) <= 1e-11 * max(1.0, field.scale)
            assert np.max(np.abs(mean(field))) < 1e-14

    def test_budget_rows(self):
        trajectory = run(taylor_green(self.grid), SolverConfig(nu=1e-2, dt=0.01, T=0.1, output_stride=5))
        rows = trajectory.budget.rows()
        assert list(rows[0]) == ['t', 'kinetic', 'dissipation_cum', 'residual']
        assert [r['t'] for r in rows] == pytest.approx([0.0, 0.05, 0.1])

    def test_keep_fields_false_keeps_endpoints(self):
        trajectory = run(taylor_green(self.grid), SolverConfig(nu=0.0, dt=0.01, T=0.1, output_stride=2),
                         keep_fields=False)
        assert trajectory.times == pytest.approx([0.0, 0.1])
        assert len(trajectory.budget.samples) == 6

    def test_initial_attainment_small(self):
        """初值强收敛: 第一个采样离初值很近"""
        v0 = taylor_green(self.grid)
        trajectory = run(v0, SolverConfig(nu=0.0, dt=0.01, T=0.1, output_stride=1))
        assert 0.0 < trajectory.initial_attainment < 0.1 * lebesgue_norm(v0, 2)

    def test_vanishing_viscosity_consistency(self):
        """||v^ν(T) - v^0(T)||_2 随 ν 减小单调减小"""
        v0 = taylor_green(self.grid)
        reference = run(v0, SolverConfig(nu=0.0, dt=0.01, T=0.5, output_stride=50)).final
        distances = [
            l2_distance(run(v0, SolverConfig(nu=nu, dt=0.01, T=0.5, output_stride=50)).final, reference)
            for nu in (1e-2, 1e-3, 1e-4)
        ]
        assert distances[0] > distances[1] > distances[2]


class TestAbort:
    """中止条件测试"""

    def setup_method(self):
        self.grid = GridSpec(16)

    def test_cfl_violation(self):
        with pytest.raises(SolverAbort) as info:
            run(taylor_green(self.grid, amplitude=100.0), SolverConfig(nu=0.0, dt=0.01, T=0.1))
        assert info.value.step == 1
        assert 'CFL' in info.value.reason

    def test_rejects_mean_flow(self):
        """加常速度破坏零均值, 直接拒绝"""
        v0 = galilean_offset(taylor_green(self.grid), (0.5, 0.0, 0.0))
        with pytest.raises(ValueError, match='zero mean'):
            run(v0, SolverConfig(nu=0.0, dt=0.01, T=0.1))

    def test_rejects_non_solenoidal(self):
        v0 = PhysicalField.from_function(self.grid, lambda x, y, z: np.stack(
            [np.sin(x), np.zeros_like(x), np.zeros_like(x)]))
        with pytest.raises(ValueError, match='divergence'):
            run(v0, SolverConfig(nu=0.0, dt=0.01, T=0.1))


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
