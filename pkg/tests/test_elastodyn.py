"""Time stepper for the regularised elastodynamics system."""
from dataclasses import replace

import numpy as np
import pytest

from elastoreg.constitutive import MaterialModel, green_st_venant, stress
from elastoreg.diagnostics import ABORTED, COMPLETED, LIFESPAN_HIT, RunRecord, RunRow, energy_estimate_check
from elastoreg.elastodyn import (NEWTON, PICARD, ElastoState, SolverConfig, bound_B_R, elasto_step,
                                 kappa_continuation, l2l2_distance, picard_map, simulate,
                                 strain_energy, work_rate)
from elastoreg.fem import NodalField, l2_norm, random_admissible_field, space
from elastoreg.mesh import build_rectangle_mesh

SVK = MaterialModel.svk()


@pytest.fixture(scope="module")
def mesh():
    return build_rectangle_mesh(4, 4, 1.0, 1.0, ("left",))


def velocity(mesh, a=0.1):
    return NodalField.interpolate(mesh, lambda x, y: (a * np.sin(np.pi * x / 2) * np.sin(np.pi * y),
                                                     0.5 * a * np.sin(np.pi * x / 2)))


def affine(mesh, a=-0.2, c=0.1):
    return NodalField.interpolate(mesh, lambda x, y: (a * x, c * x))


class TestSolverConfig:
    def test_p_derived(self):
        assert SolverConfig(MaterialModel.fung(n=3)).p == 12

    def test_p_inconsistent(self):
        with pytest.raises(ValueError):
            SolverConfig(SVK, p=3.0)

    @pytest.mark.parametrize("eta", [0.0, 1.0, -0.2])
    def test_eta_fraction_range(self, eta):
        with pytest.raises(ValueError):
            SolverConfig(SVK, eta_fraction=eta)

    @pytest.mark.parametrize("kw", [dict(mode="explicit"), dict(kappa=0.0), dict(dt=-1.0), dict(delta=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(SVK, **kw)

    def test_step_count(self):
        assert SolverConfig(SVK, dt=0.01, t_end=0.5).n_steps == 50


class TestStep:
    def test_rest_stays_at_rest(self, mesh):
        cfg = SolverConfig(SVK, dt=0.01, t_end=0.05)
        rec = simulate(cfg, mesh)
        assert rec.verdict == COMPLETED
        for name in ("kinetic", "strain", "viscous_cum", "u_vp", "w_l2"):
            assert np.all(rec.column(name) == 0.0)
        assert np.all(rec.column("min_det") == 1.0)

    def test_single_step_advances_time(self, mesh):
        cfg = SolverConfig(SVK, dt=0.01)
        st = ElastoState(0.0, NodalField.zeros(mesh), velocity(mesh), 0)
        res = elasto_step(cfg, st)
        assert res.state.t == pytest.approx(0.01)
        assert res.state.step_index == 1
        assert np.allclose(res.state.u.values, 0.01 * res.state.w.values)
        assert not res.lifespan_hit

    def test_rotation_violates_dirichlet(self, mesh):
        R = np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
        with pytest.raises(ValueError):
            NodalField(mesh, mesh.nodes @ (R - np.eye(2)).T)

    def test_inverted_initial_state_rejected(self, mesh):
        u0 = NodalField.interpolate(mesh, lambda x, y: (-1.5 * x, 0 * y))
        with pytest.raises(ValueError):
            simulate(SolverConfig(SVK), mesh, u0)

    def test_tiny_data_energy_decreases(self, mesh):
        cfg = SolverConfig(SVK, kappa=1e-3, dt=0.01, t_end=0.2, eps=1e-4, mode=NEWTON)
        rec = simulate(cfg, mesh, affine(mesh), velocity(mesh))
        tot = rec.column("total")
        assert np.all(np.diff(tot) <= 1e-8 * tot[:-1])

    def test_residual_of_newton_step(self, mesh):
        cfg = SolverConfig(SVK, dt=0.01, mode=NEWTON)
        st = ElastoState(0.0, affine(mesh), velocity(mesh), 0)
        new = elasto_step(cfg, st).state
        s = space(mesh)
        from elastoreg.constitutive import first_pk_tensor
        from elastoreg.plaplace import plaplace_flux
        x = new.w.values.ravel()
        Gw = s.grad(new.w.values)
        r = (cfg.rho / cfg.dt * (s.mass @ (x - st.w.values.ravel()))
             + s.tensor_load(cfg.kappa * plaplace_flux(Gw, cfg.p, cfg.delta)
                             + first_pk_tensor(SVK, s.grad(new.u.values))))
        assert np.linalg.norm(r[s.free]) <= cfg.newton_tol


class TestPicard:
    def test_zero_map(self, mesh):
        cfg = SolverConfig(SVK, dt=0.01)
        st = ElastoState(0.0, NodalField.zeros(mesh), NodalField.zeros(mesh))
        w, _ = picard_map(cfg, st, None, None, NodalField.zeros(mesh))
        assert np.all(w.values == 0.0)

    def test_contraction_factor_reported(self, mesh, rng):
        cfg = SolverConfig(SVK, dt=1e-3)
        st = ElastoState(0.0, affine(mesh, -0.05, 0.02), velocity(mesh))
        ratios = []
        for _ in range(5):
            w1 = st.w + random_admissible_field(mesh, rng, 1e-3)
            w2 = st.w + random_admissible_field(mesh, rng, 1e-3)
            n1, _ = picard_map(cfg, st, None, None, w1)
            n2, _ = picard_map(cfg, st, None, None, w2)
            ratios.append(l2_norm(n1 - n2) / l2_norm(w1 - w2))
        assert np.all(np.isfinite(ratios))

    def test_agrees_with_newton(self, mesh):
        cfg = SolverConfig(SVK, dt=1e-3, t_end=3e-3)
        u0, u1 = affine(mesh, -0.05, 0.02), velocity(mesh)
        a = simulate(cfg, mesh, u0, u1)
        b = simulate(replace(cfg, mode=NEWTON), mesh, u0, u1)
        assert np.all(a.column("picard_iters")[1:] > 0)
        assert l2l2_distance(a, b) <= 10 * cfg.picard_tol

    def test_fallback_to_newton(self, mesh):
        cfg = SolverConfig(SVK, dt=1e-2, t_end=2e-2, picard_max=1)
        rec = simulate(cfg, mesh, affine(mesh), velocity(mesh))
        ref = simulate(replace(cfg, mode=NEWTON), mesh, affine(mesh), velocity(mesh))
        assert rec.verdict == COMPLETED
        assert np.all(rec.column("picard_iters") == 0)
        assert l2l2_distance(rec, ref) == 0.0


class TestRunVerdicts:
    def test_lifespan_hit(self, mesh):
        f = lambda t: NodalField(mesh, np.tile([-8.0, 0.0], (mesh.n_nodes, 1)), constrained=False)
        cfg = SolverConfig(SVK, dt=0.01, t_end=2.0, mode=NEWTON)
        rec = simulate(cfg, mesh, f=f)
        assert rec.verdict == LIFESPAN_HIT
        last = rec.rows[-1]
        assert last.t < rec.t_star <= last.t + cfg.dt
        assert np.all(rec.column("min_det") >= rec.eta)

    def test_abort_keeps_partial_rows(self, mesh):
        cfg = SolverConfig(SVK, dt=0.5, t_end=2.0, mode=NEWTON, newton_max=1, max_halvings=0)
        rec = simulate(cfg, mesh, affine(mesh), velocity(mesh, 1.0))
        assert rec.verdict == ABORTED
        assert len(rec.rows) >= 1
        assert "halvings" in rec.message

    def test_times_strictly_increasing(self, mesh):
        rec = simulate(SolverConfig(SVK, dt=0.01, t_end=0.05, mode=NEWTON), mesh, affine(mesh), velocity(mesh))
        assert np.all(np.diff(rec.times) > 0)

    def test_viscous_cum_non_decreasing(self, mesh):
        rec = simulate(SolverConfig(SVK, dt=0.01, t_end=0.1, mode=NEWTON), mesh, affine(mesh), velocity(mesh))
        assert np.all(np.diff(rec.column("viscous_cum")) >= 0)

    def test_eps_scales_data(self, mesh):
        cfg = SolverConfig(SVK, dt=0.01, t_end=0.01, eps=0.5, mode=NEWTON)
        rec = simulate(cfg, mesh, affine(mesh), velocity(mesh))
        assert rec.u1_sq == pytest.approx(0.25 * l2_norm(velocity(mesh)) ** 2)


class TestWorkRate:
    def test_symmetric_form(self, mesh, rng):
        # (I + G) Sigma : grad v == Sigma : sym((I + G)^T grad v)
        for m in (SVK, MaterialModel.fung(), MaterialModel.ogden(1.5)):
            u = affine(mesh, -0.1, 0.05) + random_admissible_field(mesh, rng, 0.01)
            v = random_admissible_field(mesh, rng)
            s = space(mesh)
            G, H = s.grad(u.values), s.grad(v.values)
            F = np.eye(2) + G
            dE = 0.5 * (np.swapaxes(F, -1, -2) @ H + np.swapaxes(H, -1, -2) @ F)
            S = stress(m, green_st_venant(G))
            rhs = float(np.sum(mesh.areas * np.einsum("tij,tij->t", S, dE)))
            assert work_rate(m, u, v) == pytest.approx(rhs, rel=1e-12, abs=1e-14)

    def test_static_path(self, mesh):
        assert work_rate(SVK, affine(mesh), NodalField.zeros(mesh)) == 0.0

    def test_strain_energy_of_stretch(self, mesh):
        # u = (a x, 0): E = diag(a + a^2/2, 0), W = (mu + lam/2) e^2
        a = 0.1
        u = NodalField.interpolate(mesh, lambda x, y: (a * x, 0 * y))
        e = a + a * a / 2
        assert strain_energy(SVK, u) == pytest.approx(1.5 * e * e, rel=1e-12)


def synthetic_record(mesh, us, ws, dt, p=4.0):
    rec = RunRecord(1.0, 1.0, p, dt, dt * (len(us) - 1), 0.5, 0.0, 0.0, mesh=mesh)
    for n in range(len(us)):
        rec.rows.append(RunRow(n, n * dt, *([0.0] * 10), 0, 0))
    rec.u_snapshots = [u.values for u in us]
    rec.w_snapshots = [w.values for w in ws]
    return rec


class TestBoundBR:
    def test_static_equality(self, mesh):
        u0 = affine(mesh)
        rec = synthetic_record(mesh, [u0] * 11, [NodalField.zeros(mesh)] * 11, 0.05)
        rep = bound_B_R(rec)
        assert rep.w_norm == 0.0
        assert rep.lhs == pytest.approx(rep.bound, rel=1e-12)
        assert rep.holds

    def test_constant_velocity(self, mesh):
        w = velocity(mesh)
        dt = 0.1
        us = [w * (n * dt) for n in range(11)]
        rec = synthetic_record(mesh, us, [w] * 11, dt)
        rep = bound_B_R(rec)
        assert rep.holds
        assert rep.lhs <= rep.T ** 0.25 * rep.R

    def test_horizon_limit(self, mesh):
        rec = synthetic_record(mesh, [NodalField.zeros(mesh)] * 3, [NodalField.zeros(mesh)] * 3, 1.0)
        with pytest.raises(ValueError):
            bound_B_R(rec)

    def test_radius_too_small(self, mesh):
        w = velocity(mesh)
        rec = synthetic_record(mesh, [w * (0.1 * n) for n in range(4)], [w] * 4, 0.1)
        with pytest.raises(ValueError):
            bound_B_R(rec, R=1e-6)

    def test_computed_run(self, mesh):
        cfg = SolverConfig(SVK, dt=0.02, t_end=0.4, mode=NEWTON)
        rec = simulate(cfg, mesh, affine(mesh), velocity(mesh, 0.5))
        assert bound_B_R(rec).holds


class TestKappaContinuation:
    def test_zero_data(self, mesh):
        sw = kappa_continuation(SolverConfig(SVK, dt=0.02, t_end=0.1), [1e-1, 1e-2], mesh)
        assert sw.gaps == [0.0]
        assert sw.u_sup == [0.0, 0.0] and sw.viscous_total == [0.0, 0.0]

    @pytest.mark.parametrize("sched", [[], [1e-2, 1e-1], [1e-1, 1e-1], [1e-1, -1e-2]])
    def test_schedule_validation(self, mesh, sched):
        with pytest.raises(ValueError):
            kappa_continuation(SolverConfig(SVK), sched, mesh)

    def test_viscous_bounded_by_energy_rhs(self, mesh):
        cfg = SolverConfig(SVK, dt=0.02, t_end=0.3, mode=NEWTON)
        sw = kappa_continuation(cfg, [1e-1, 1e-2, 1e-3], mesh, affine(mesh, -0.05, 0.02), velocity(mesh, 0.3))
        checks = [energy_estimate_check(r) for r in sw.records]
        c0 = max(c.c0_min for c in checks)
        for rec, chk in zip(sw.records, checks):
            T = rec.rows[-1].t
            assert rec.rows[-1].viscous_cum <= c0 * np.exp(c0 * T) * chk.data[-1]

    def test_threaded_matches_serial(self, mesh):
        cfg = SolverConfig(SVK, dt=0.02, t_end=0.1, mode=NEWTON)
        args = ([1e-1, 1e-2], mesh, affine(mesh), velocity(mesh))
        a = kappa_continuation(cfg, *args)
        b = kappa_continuation(cfg, *args, workers=2)
        assert a.gaps == b.gaps
