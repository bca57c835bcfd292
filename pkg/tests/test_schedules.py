import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ersde.errors import ParameterError
from ersde.schedules import (
    CosineVPSchedule, EDMVPSchedule, LinearVPSchedule, TimeGrid, VESchedule, edm_step_grid,
    edm_to_vp, linear_vp_alpha, make_schedule, uniform_time_grid,
)

# frozen with mpmath at 30 digits
EDM_M3_MID = 2.51521897614715857882753227584
ALPHA_T1 = 0.00657158649492961501405028601928
SIGMA_EDMVP_T1 = 152.166970283946471920747488788

VP_SCHEDULES = [LinearVPSchedule(), CosineVPSchedule(), edm_to_vp()]
ALL_SCHEDULES = [VESchedule(), *VP_SCHEDULES]


class TestEdmGrid:
    def test_endpoints_exact(self):
        g = edm_step_grid(10)
        assert g.sigmas[0] == 80.0
        assert g.sigmas[9] == 0.002
        assert g.sigmas[-1] == 0.0
        assert g.steps == 10

    def test_midpoint_value(self):
        g = edm_step_grid(3)
        assert g.sigmas[1] == pytest.approx(EDM_M3_MID, rel=1e-14)

    def test_nodes_equal_sigmas(self):
        g = edm_step_grid(7)
        np.testing.assert_array_equal(g.nodes, g.sigmas)
        assert g.is_ve

    def test_without_terminal(self):
        g = edm_step_grid(5, terminal=False)
        assert g.steps == 4 and g.sigmas[-1] == 0.002

    @pytest.mark.parametrize("kw", [dict(sigma_min=0.0), dict(sigma_min=90.0),
                                    dict(rho=0.0), dict(rho=-1.0)])
    def test_bad_range(self, kw):
        with pytest.raises(ParameterError):
            edm_step_grid(5, **kw)

    def test_m1_is_single_step_to_zero(self):
        g = edm_step_grid(1)
        np.testing.assert_array_equal(g.sigmas, [80.0, 0.0])


class TestUniformGrid:
    def test_formula(self):
        g = uniform_time_grid(3, 0.001)
        assert g.nodes[0] == 1.0
        assert g.nodes[2] == 0.001
        assert g.nodes[1] == pytest.approx(0.5005, abs=1e-15)
        assert g.nodes[3] == 0.0

    def test_no_terminal(self):
        g = uniform_time_grid(4, 0.01, terminal=False)
        assert g.nodes[-1] == 0.01 and g.terminal_epsilon == 0.01

    @pytest.mark.parametrize("eps", [1.0, 1.5, 0.0, -0.1])
    def test_bad_epsilon(self, eps):
        with pytest.raises(ParameterError):
            uniform_time_grid(5, eps)

    def test_cosine_starts_at_t_max(self):
        s = CosineVPSchedule()
        g = uniform_time_grid(5, schedule=s)
        assert g.nodes[0] == s.t_max
        assert np.all(np.isfinite(g.lambdas))


class TestLinearVP:
    def test_t0(self):
        assert linear_vp_alpha(0.0) == 1.0

    def test_t1(self):
        assert linear_vp_alpha(1.0, 0.1, 20.0) == pytest.approx(ALPHA_T1, rel=1e-14)

    def test_zero_beta(self):
        assert linear_vp_alpha(0.5, 0.0, 0.0) == 1.0

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            linear_vp_alpha(1.5)

    def test_sigma_complement(self):
        s = LinearVPSchedule()
        t = np.linspace(0.01, 1, 50)
        np.testing.assert_allclose(s.sigma(t), np.sqrt(1 - s.alpha(t) ** 2), rtol=1e-12)


class TestEdmToVp:
    def test_fit_hits_endpoints(self):
        s = edm_to_vp()
        assert s.lam(1.0) == pytest.approx(80.0, rel=1e-12)
        assert s.lam(1e-3) == pytest.approx(0.002, rel=1e-9)

    def test_quoted_constants(self):
        s = EDMVPSchedule(beta_d=19.9, beta_min=0.1)
        assert s.sigma(1.0) / s.alpha(1.0) == pytest.approx(SIGMA_EDMVP_T1, rel=1e-12)

    def test_unit_norm_random_t(self):
        s = edm_to_vp()
        t = np.random.default_rng(3).uniform(1e-3, 1, 10)
        np.testing.assert_allclose(s.alpha(t) ** 2 + s.sigma(t) ** 2, 1.0, atol=1e-12)

    def test_round_trip(self):
        s = edm_to_vp()
        lam = np.geomspace(0.002, 80, 500)
        np.testing.assert_allclose(s.lam(s.t_of_lambda(lam)), lam, rtol=1e-9)

    def test_lambda_matches_edm_sigma(self):
        s = edm_to_vp()
        levels = edm_step_grid(12).lambdas
        g = s.grid_from_levels(levels)
        np.testing.assert_array_equal(g.lambdas, levels)
        np.testing.assert_allclose(s.lam(g.nodes[:-1]), levels[:-1], rtol=1e-9)

    def test_no_solution(self):
        with pytest.raises(ParameterError):
            edm_to_vp(sigma_min=1.0, sigma_max=1.0001, epsilon=0.9)

    def test_bad_range(self):
        with pytest.raises(ParameterError):
            edm_to_vp(sigma_min=5.0, sigma_max=1.0)


@pytest.mark.parametrize("sched", VP_SCHEDULES, ids=lambda s: s.kind)
def test_vp_unit_norm(sched):
    t = np.linspace(1e-3, sched.t_max, 1000)
    assert np.max(np.abs(sched.alpha(t) ** 2 + sched.sigma(t) ** 2 - 1)) < 1e-12


@pytest.mark.parametrize("sched", ALL_SCHEDULES, ids=lambda s: s.kind)
def test_monotone_random_pairs(sched):
    rng = np.random.default_rng(11)
    lo = 1e-3 if sched.is_vp else 0.002
    t = np.sort(rng.uniform(lo, sched.t_max, (1000, 2)), axis=1)
    t = t[t[:, 0] < t[:, 1]]
    assert np.all(sched.sigma(t[:, 0]) < sched.sigma(t[:, 1]))
    assert np.all(sched.lam(t[:, 0]) < sched.lam(t[:, 1]))
    assert np.all(sched.alpha(t[:, 0]) >= sched.alpha(t[:, 1]))


def test_ve_alpha_is_one():
    t = np.linspace(0.002, 80, 20)
    assert np.all(VESchedule().alpha(t) == 1.0)


@pytest.mark.parametrize("sched", VP_SCHEDULES, ids=lambda s: s.kind)
def test_inverse_lambda(sched):
    t = np.linspace(0.05, sched.t_max * 0.99, 40)
    np.testing.assert_allclose(sched.t_of_lambda(sched.lam(t)), t, rtol=1e-9)


@given(st.floats(1e-3, 1.0))
def test_linear_vp_alpha_range(t):
    a = linear_vp_alpha(t)
    assert 0 < a <= 1


def test_make_schedule():
    assert isinstance(make_schedule("ve-edm"), VESchedule)
    assert isinstance(make_schedule("vp-linear", beta_min=0.2, beta_max=10), LinearVPSchedule)
    assert isinstance(make_schedule("vp-cosine"), CosineVPSchedule)
    assert isinstance(make_schedule("vp-from-edm"), EDMVPSchedule)
    with pytest.raises(ParameterError):
        make_schedule("ddpm")


class TestTimeGrid:
    def test_rejects_duplicates(self):
        with pytest.raises(ParameterError):
            TimeGrid(nodes=[2.0, 1.0, 1.0], sigmas=[2.0, 1.0, 1.0], alphas=[1, 1, 1],
                     lambdas=[2.0, 1.0, 1.0])

    def test_rejects_single_node(self):
        with pytest.raises(ParameterError):
            TimeGrid(nodes=[1.0], sigmas=[1.0], alphas=[1.0], lambdas=[1.0])

    def test_read_only(self):
        g = edm_step_grid(4)
        with pytest.raises(ValueError):
            g.sigmas[0] = 1.0

    @settings(max_examples=30)
    @given(st.integers(1, 200))
    def test_edm_grid_strictly_decreasing(self, m):
        g = edm_step_grid(m)
        assert np.all(np.diff(g.sigmas) < 0)
        assert g.steps == m
