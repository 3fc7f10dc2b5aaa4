import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qavb import anneal, gmm
from qavb.anneal import AnnealState, ScheduleConfig, hopping_matrix, schedule
from qavb.gmm import GmmPrior
from qavb.smallmat import check_density, softmax, stable_exp_density, sym_eig


class TestHopping:
    def test_k3_all_pairs(self):
        np.testing.assert_array_equal(hopping_matrix(3), np.ones((3, 3)) - np.eye(3))

    def test_k4_corners(self):
        expected = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], float)
        np.testing.assert_array_equal(hopping_matrix(4), expected)

    def test_k5_row_sums(self):
        np.testing.assert_array_equal(hopping_matrix(5).sum(axis=1), np.full(5, 2.0))

    @pytest.mark.parametrize("k", [1, 2])
    def test_small_k_rejected(self, k):
        with pytest.raises(anneal.UnsupportedDimensionError):
            hopping_matrix(k)

    @pytest.mark.parametrize("k", [3, 7, 15])
    def test_symmetric_zero_diagonal(self, k):
        h = hopping_matrix(k)
        assert np.array_equal(h, h.T) and not np.any(np.diag(h))

    @pytest.mark.parametrize("k", [3, 4, 8, 15])
    def test_spectrum_closed_form(self, k):
        expected = np.sort(2.0 * np.cos(2.0 * np.pi * np.arange(k) / k))
        np.testing.assert_allclose(sym_eig(hopping_matrix(k)).values, expected, atol=1e-12)


class TestSchedule:
    def test_qavb_at_first_breakpoint(self):
        st_ = schedule(450, ScheduleConfig.preset("qavb"))
        assert (st_.beta, st_.s) == (30.0, 0.0)

    @pytest.mark.parametrize("t", [500, 501, 2000])
    def test_qavb_terminal(self, t):
        st_ = schedule(t, ScheduleConfig.preset("qavb"))
        assert (st_.beta, st_.s) == (1.0, 0.0)

    def test_qavb_midway(self):
        cfg = ScheduleConfig.preset("qavb")
        assert schedule(225, cfg).s == pytest.approx(0.5)
        assert schedule(475, cfg).beta == pytest.approx(15.5)

    def test_savb_start(self):
        st_ = schedule(0, ScheduleConfig.preset("savb"))
        assert st_.beta == 0.9 and st_.s == 0.0
        assert schedule(250, ScheduleConfig.preset("savb")).beta == pytest.approx(0.95)
        assert schedule(500, ScheduleConfig.preset("savb")).beta == 1.0

    def test_vb_forces_classical(self):
        cfg = ScheduleConfig(algorithm="vb", beta0=5.0, s0=0.5)
        assert (cfg.beta0, cfg.s0) == (1.0, 0.0)
        assert schedule(3, cfg) == AnnealState(3, 1.0, 0.0)

    def test_invalid(self):
        with pytest.raises(anneal.ScheduleError):
            ScheduleConfig(tau_qa1=500, tau_qa2=450)
        with pytest.raises(anneal.ScheduleError):
            ScheduleConfig(s0=1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.0, 60.0), st.floats(0.0, 1.0), st.integers(1, 200), st.integers(1, 200))
    def test_shape(self, beta0, s0, tau1, gap):
        cfg = ScheduleConfig(beta0=beta0, s0=s0, tau_qa1=tau1, tau_qa2=tau1 + gap)
        states = [schedule(t, cfg) for t in range(tau1 + gap + 5)]
        s = np.array([x.s for x in states])
        b = np.array([x.beta for x in states])
        assert np.all(np.diff(s) <= 0)
        assert np.all(np.diff(b) <= 1e-12)
        assert np.all(b[: tau1 + 1] == beta0)
        assert (b[-1], s[-1]) == (1.0, 0.0)
        assert cfg.end <= tau1 + gap
        assert all((x.beta, x.s) == (1.0, 0.0) for x in states[cfg.end:])


def _setup(small_data, k=5, seed=0):
    prior = GmmPrior(k=k, d=2)
    r = np.random.default_rng(seed).dirichlet(np.ones(k), size=small_data.n)
    return prior, gmm.m_step(prior, small_data, r, 1.0)


class TestEStep:
    def test_classical_is_softmax(self, small_data):
        prior, post = _setup(small_data)
        dens, r = anneal.e_step(post, small_data, AnnealState(0, 1.0, 0.0))
        assert dens is None
        h = gmm.expected_log_resp(post, small_data.points)
        assert np.abs(r - softmax(h, axis=1)).max() <= 1e-12

    def test_quantum_path_at_zero_s_agrees(self, small_data):
        # the eigen route with s = 0 must match the softmax shortcut
        prior, post = _setup(small_data)
        h = gmm.expected_log_resp(post, small_data.points)
        a = anneal.effective_hamiltonian(h, AnnealState(0, 1.0, 0.0), hopping_matrix(5))
        rho = stable_exp_density(a)
        np.testing.assert_allclose(np.diagonal(rho, axis1=1, axis2=2), softmax(h, axis=1), atol=1e-12)

    def test_full_driver_is_data_independent(self, small_data):
        prior, post = _setup(small_data)
        hqu = hopping_matrix(5)
        dens, r = anneal.e_step(post, small_data, AnnealState(0, 3.0, 1.0), hqu)
        ref = stable_exp_density(-3.0 * hqu)
        for rho in dens:
            np.testing.assert_allclose(rho, ref, atol=1e-14)

    def test_ground_state_k4(self, small_data):
        prior = GmmPrior(k=4, d=2)
        hqu = hopping_matrix(4)
        dens, r = anneal.e_step(prior.as_posterior(), small_data, AnnealState(0, 30.0, 1.0), hqu)
        np.testing.assert_allclose(r, 0.25, atol=1e-6)
        gs = sym_eig(hqu).vectors[:, 0]
        np.testing.assert_allclose(np.abs(gs), 0.5, atol=1e-12)
        np.testing.assert_allclose(dens[0], np.outer(gs, gs), atol=1e-6)

    def test_densities_valid(self, small_data):
        prior, post = _setup(small_data)
        dens, r = anneal.e_step(post, small_data, AnnealState(0, 2.0, 0.5), hopping_matrix(5))
        check_density(dens)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-10)
        assert np.all((r >= 0) & (r <= 1))

    def test_chunking_is_invisible(self, small_data, monkeypatch):
        prior, post = _setup(small_data)
        state, hqu = AnnealState(0, 2.0, 0.5), hopping_matrix(5)
        whole, _ = anneal.e_step(post, small_data, state, hqu)
        monkeypatch.setattr(anneal, "E_STEP_CHUNK", 7)
        parts, _ = anneal.e_step(post, small_data, state, hqu)
        np.testing.assert_array_equal(whole, parts)

    def test_wrong_driver_size(self, small_data):
        prior, post = _setup(small_data)
        with pytest.raises(anneal.UnsupportedDimensionError):
            anneal.e_step(post, small_data, AnnealState(0, 2.0, 0.5), hopping_matrix(4))


class TestObjective:
    def test_equals_minus_elbo_at_classical_point(self, small_data):
        prior, post = _setup(small_data)
        state = AnnealState(0, 1.0, 0.0)
        dens, r = anneal.e_step(post, small_data, state)
        g = anneal.mean_field_objective(post, dens, small_data, prior, state, r=r)
        assert g == pytest.approx(-gmm.elbo(prior, post, small_data, r), abs=1e-9)

    def test_pure_state_has_no_entropy(self):
        v = np.array([1.0, 0.0, 0.0])
        assert anneal.hidden_entropy(np.outer(v, v)[None]) == pytest.approx(0.0, abs=1e-12)

    def test_one_sweep_descends(self, small_data):
        prior = GmmPrior(k=5, d=2)
        hqu = hopping_matrix(5)
        state = AnnealState(0, 2.0, 0.5)
        r = np.random.default_rng(3).dirichlet(np.ones(5), size=small_data.n)
        dens = np.stack([np.diag(x) for x in r])
        post = gmm.m_step(prior, small_data, r, state.data_weight)
        g0 = anneal.mean_field_objective(post, dens, small_data, prior, state, hqu)
        dens, r = anneal.e_step(post, small_data, state, hqu)
        g1 = anneal.mean_field_objective(post, dens, small_data, prior, state, hqu)
        post = gmm.m_step(prior, small_data, r, state.data_weight)
        g2 = anneal.mean_field_objective(post, dens, small_data, prior, state, hqu)
        assert g1 - g0 <= 1e-8 and g2 - g1 <= 1e-8

    def test_objective_deltas_track_elbo(self, small_data):
        prior = GmmPrior(k=5, d=2)
        res = anneal.run_trial(prior, small_data, ScheduleConfig(algorithm="vb", max_iters=15), seed=1)
        dg = np.diff(res.objective_trace)
        dl = np.diff(res.elbo_trace)
        np.testing.assert_allclose(dg, -dl, atol=1e-8)


class TestOptimality:
    def test_diagonal_case(self, rng):
        h = rng.normal(size=3)
        gap = anneal.estep_optimality_check(h, AnnealState(0, 1.0, 0.0), hopping_matrix(3), 1000, diagonal=True)
        assert gap <= 1e-9

    def test_quantum_case(self, rng):
        h = rng.normal(size=3) * 2
        assert anneal.estep_optimality_check(h, AnnealState(0, 2.0, 0.7), hopping_matrix(3), 1000) <= 1e-9

    def test_self_comparison(self, rng):
        h = rng.normal(size=4)
        a = anneal.effective_hamiltonian(h, AnnealState(0, 2.0, 0.3), hopping_matrix(4))
        rho = stable_exp_density(a)
        assert anneal.site_free_energy(rho, a) - anneal.site_free_energy(rho, a) == 0.0
        # closed form attains -ln Tr exp(A)
        lam = np.linalg.eigvalsh(a)
        log_z = lam.max() + np.log(np.exp(lam - lam.max()).sum())
        assert anneal.site_free_energy(rho, a) == pytest.approx(-log_z, abs=1e-12)


class TestRunTrial:
    def test_deterministic(self, small_data):
        prior = GmmPrior(k=4, d=2)
        cfg = ScheduleConfig(beta0=5.0, tau_qa1=20, tau_qa2=30, max_iters=60)
        a = anneal.run_trial(prior, small_data, cfg, seed=11)
        b = anneal.run_trial(prior, small_data, cfg, seed=11)
        assert a.to_dict() == b.to_dict()

    def test_vb_equals_degenerate_qavb(self, small_data):
        prior = GmmPrior(k=4, d=2)
        vb = anneal.run_trial(prior, small_data, ScheduleConfig(algorithm="vb", max_iters=200), seed=2)
        qa = anneal.run_trial(
            prior, small_data, ScheduleConfig(beta0=1.0, s0=0.0, max_iters=200), seed=2
        )
        assert vb.iterations_run == qa.iterations_run
        np.testing.assert_allclose(vb.elbo_trace, qa.elbo_trace, atol=1e-10, rtol=0)

    def test_reaches_terminal_state(self, small_data):
        prior = GmmPrior(k=5, d=2)
        cfg = ScheduleConfig(beta0=30.0, s0=1.0, tau_qa1=45, tau_qa2=50, max_iters=400)
        res = anneal.run_trial(prior, small_data, cfg, seed=0)
        assert (res.final_beta, res.final_s) == (1.0, 0.0)
        assert np.isfinite(res.final_elbo)
        assert res.iterations_run > 50

    def test_descent_on_constant_segments(self, small_data):
        prior = GmmPrior(k=5, d=2)
        cfg = ScheduleConfig(beta0=8.0, s0=1.0, tau_qa1=20, tau_qa2=30, max_iters=80)
        res = anneal.run_trial(prior, small_data, cfg, seed=4)
        states = [schedule(t, cfg) for t in range(res.iterations_run)]
        for t in range(1, res.iterations_run):
            same = (states[t].beta, states[t].s) == (states[t - 1].beta, states[t - 1].s)
            if same:
                assert res.objective_trace[t] - res.objective_trace[t - 1] <= 1e-8

    def test_cyclic_relabeling_equivariance(self, small_data):
        k = 5
        prior = GmmPrior(k=k, d=2)
        cfg = ScheduleConfig(beta0=4.0, s0=0.8, tau_qa1=10, tau_qa2=15, max_iters=25)
        r0 = np.random.default_rng(9).dirichlet(np.ones(k), size=small_data.n)
        shift = np.roll(np.arange(k), 1)
        assert np.array_equal(hopping_matrix(k)[np.ix_(shift, shift)], hopping_matrix(k))
        a, ra = anneal.run_trial(prior, small_data, cfg, 0, r0=r0, keep_responsibilities=True)
        b, rb = anneal.run_trial(prior, small_data, cfg, 0, r0=r0[:, shift], keep_responsibilities=True)
        np.testing.assert_allclose(rb, ra[:, shift], atol=1e-9)
        np.testing.assert_allclose(a.elbo_trace, b.elbo_trace, atol=1e-8)

    def test_literal_nu0_runs(self, small_data):
        prior = GmmPrior.standard(6, 2, nu0_literal=True)
        cfg = ScheduleConfig(beta0=30.0, s0=1.0, tau_qa1=60, tau_qa2=70, max_iters=150)
        res = anneal.run_trial(prior, small_data, cfg, seed=0)
        assert np.isfinite(res.final_elbo)
