"""Evolutionary p-Laplace step: flux, Newton solve, dissipation and the estimate monitor."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastoreg._newton import NewtonFailure
from elastoreg.fem import (BoundaryField, NodalField, QuadTensorField, l2_norm,
                           random_admissible_field, space)
from elastoreg.mesh import build_rectangle_mesh, side_edge_mask
from elastoreg.plaplace import (PLaplaceProblem, pl_advance, pl_energy_monitor, pl_solve, pl_step,
                                pl_step_info, plaplace_flux, plaplace_flux_tangent)

ALL_SIDES = ("left", "right", "bottom", "top")


@pytest.fixture(scope="module")
def mesh():
    return build_rectangle_mesh(6, 6, 1.0, 1.0, ("left",))


def sine_field(mesh, a=0.5):
    return NodalField.interpolate(mesh, lambda x, y: (a * np.sin(np.pi * x / 2) * np.sin(np.pi * y),
                                                     a * x * (1 - y)))


class TestFlux:
    def test_zero(self):
        assert np.all(plaplace_flux(np.zeros((2, 2)), 3.0, 0.0) == 0)

    def test_p2_identity(self, rng):
        G = rng.normal(size=(5, 2, 2))
        assert np.array_equal(plaplace_flux(G, 2.0, 0.3), G)

    def test_unit_gradient(self):
        G = np.array([[1.0, 0], [0, 0]])
        assert np.allclose(plaplace_flux(G, 4.0, 0.0), G)

    def test_smoothing_value(self):
        G = np.array([[0.0, 3.0], [4.0, 0.0]])
        assert np.allclose(plaplace_flux(G, 4.0, 1.0), 26.0 * G)

    @pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
    @pytest.mark.parametrize("delta", [0.0, 1e-3])
    def test_tangent_finite_differences(self, rng, p, delta):
        G = rng.normal(size=(2, 2))
        T = plaplace_flux_tangent(G, p, delta)
        h = 1e-6
        for k in range(2):
            for l in range(2):
                d = np.zeros((2, 2))
                d[k, l] = h
                fd = (plaplace_flux(G + d, p, delta) - plaplace_flux(G - d, p, delta)) / (2 * h)
                assert np.allclose(fd, T[:, :, k, l], rtol=1e-6, atol=1e-8)

    @settings(max_examples=200, deadline=None)
    @given(a=st.lists(st.floats(-10, 10), min_size=4, max_size=4),
           b=st.lists(st.floats(-10, 10), min_size=4, max_size=4),
           p=st.sampled_from([2.5, 3.0, 4.0]))
    def test_monotone(self, a, b, p):
        A, B = np.array(a).reshape(2, 2), np.array(b).reshape(2, 2)
        assert np.sum((plaplace_flux(A, p) - plaplace_flux(B, p)) * (A - B)) >= -1e-14 * max(
            1.0, np.abs(plaplace_flux(A, p)).max() * np.abs(A - B).max())


class TestProblem:
    @pytest.mark.parametrize("kw", [dict(kappa=0.0), dict(p=1.5), dict(delta=-1.0), dict(rho=0.0)])
    def test_invalid(self, mesh, kw):
        base = dict(kappa=1.0, p=3.0)
        base.update(kw)
        with pytest.raises(ValueError):
            PLaplaceProblem(mesh, **base)


class TestStep:
    def test_zero_fixed_point(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=3.0)
        w = pl_step(prob, NodalField.zeros(mesh), 0.01)
        assert np.all(w.values == 0.0)

    def test_constant_tensor_all_dirichlet(self):
        m = build_rectangle_mesh(4, 4, dirichlet_sides=ALL_SIDES)
        prob = PLaplaceProblem(m, kappa=1.0, p=3.0, A=QuadTensorField(m, 2.5 * np.eye(2)))
        w = pl_step(prob, NodalField.zeros(m), 0.01)
        assert np.abs(w.values).max() < 1e-14

    def test_dt_must_be_positive(self, mesh):
        with pytest.raises(ValueError):
            pl_step(PLaplaceProblem(mesh, kappa=1.0, p=3.0), NodalField.zeros(mesh), 0.0)

    @pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
    def test_residual_below_tolerance(self, mesh, p):
        s = space(mesh)
        g = BoundaryField.on_edges(mesh, side_edge_mask(mesh, "right"), [0.3, -0.1])
        prob = PLaplaceProblem(mesh, kappa=0.5, p=p, g=g)
        w_old = sine_field(mesh)
        dt = 0.02
        w = pl_step(prob, w_old, dt)
        x = w.values.ravel()
        r = (prob.rho / dt * (s.mass @ (x - w_old.values.ravel()))
             + prob.kappa * s.tensor_load(plaplace_flux(s.grad_flat(x), p, prob.delta))
             - s.boundary_load(g.values))
        assert np.linalg.norm(r[s.free]) <= prob.newton_tol
        assert np.all(w.values[mesh.dirichlet_mask] == 0.0)

    def test_iteration_count_reported(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=4.0)
        _, iters = pl_step_info(prob, sine_field(mesh), 0.01)
        assert 1 <= iters <= prob.newton_max

    def test_time_dependent_source(self, mesh):
        f = lambda t: NodalField.interpolate(mesh, lambda x, y: (t + 0 * x, 0 * y), constrained=False)
        prob = PLaplaceProblem(mesh, kappa=1.0, p=2.0, f=f)
        w0 = pl_step(prob, NodalField.zeros(mesh), 0.1, t_new=0.0)
        w1 = pl_step(prob, NodalField.zeros(mesh), 0.1, t_new=1.0)
        assert np.all(w0.values == 0.0)
        assert np.abs(w1.values).max() > 0

    def test_halving_on_failure(self, mesh):
        # Newton needs fewer iterations on shorter steps from this start
        prob = PLaplaceProblem(mesh, kappa=1.0, p=4.0, newton_max=10, max_halvings=6)
        w_old = sine_field(mesh, 10.0)
        with pytest.raises(NewtonFailure):
            pl_step(prob, w_old, 0.5)
        w = pl_advance(prob, w_old, 0.5, 0.5)
        assert np.all(np.isfinite(w.values))
        assert l2_norm(w) < l2_norm(w_old)

    def test_halving_exhausted(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=4.0, newton_max=1, max_halvings=0)
        with pytest.raises(NewtonFailure):
            pl_advance(prob, sine_field(mesh, 2.0), 0.5, 0.5)


class TestDissipation:
    @pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
    def test_l2_norm_non_increasing(self, mesh, p):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=p, u1=sine_field(mesh))
        traj = pl_solve(prob, 0.01, 20)
        norms = np.array([l2_norm(w) for w in traj])
        assert np.all(np.diff(norms) <= 0.0)

    def test_delta_consistency(self, mesh):
        def run(delta):
            prob = PLaplaceProblem(mesh, kappa=1.0, p=4.0, delta=delta, u1=sine_field(mesh))
            return pl_solve(prob, 0.01, 10)

        def gap(a, b):
            return np.sqrt(sum(0.01 * l2_norm(x - y) ** 2 for x, y in zip(a[1:], b[1:])))

        ds = [0.2, 0.1, 0.05]
        runs = [run(d) for d in ds]
        g1, g2 = gap(runs[0], runs[1]), gap(runs[1], runs[2])
        assert np.log2(g1 / g2) >= 0.9


class TestManufactured:
    def test_p2_spatial_order(self):
        from elastoreg.cli import manufactured_error
        errs = [manufactured_error(n, 1e-3, 0.02) for n in (4, 8, 16)]
        orders = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(orders > 1.6)


class TestEnergyMonitor:
    def test_zero_data(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=3.0)
        rep = pl_energy_monitor(pl_solve(prob, 0.01, 5), prob, 0.01)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and not rep.violated

    def test_decaying_run(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=3.0, u1=sine_field(mesh))
        rep = pl_energy_monitor(pl_solve(prob, 0.01, 20), prob, 0.01)
        assert np.isfinite(rep.lhs)
        assert np.all(np.diff(rep.increments) <= 0)
        assert np.all(np.diff(rep.lhs_cumulative) >= 0)
        assert not rep.violated

    def test_initial_data_scales_quadratically(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=3.0)
        u1 = sine_field(mesh)
        r1 = pl_energy_monitor([u1], prob, 0.01).rhs
        r3 = pl_energy_monitor([u1 * 3.0], prob, 0.01).rhs
        assert r3 == pytest.approx(9.0 * r1, rel=1e-12)

    def test_violation_flag(self, mesh):
        prob = PLaplaceProblem(mesh, kappa=1.0, p=3.0, u1=sine_field(mesh))
        rep = pl_energy_monitor(pl_solve(prob, 0.01, 5), prob, 0.01, c_mon=1e-12)
        assert rep.violated
