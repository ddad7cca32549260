"""Conditional-distribution checks for each Gibbs update.

Every expected moment below is derived by hand from the conjugate algebra
(worked in the comments) and checked against repeated draws from a frozen
base state, so the updates are validated against independent arithmetic,
not against themselves.
"""

import copy

import numpy as np
import pytest

from ggplds.errors import ModeError
from ggplds.gibbs import (
    gibbs_sweep,
    run_chain,
    scheduled_iterations,
    update_community_params,
    update_dispersion,
    update_edge_counts,
    update_latent_states,
    update_loadings,
    update_mask,
    update_node_weights,
    update_obs_precision,
    update_pg_auxiliaries,
    update_scales,
    update_transition_weights,
)
from ggplds.samplers import RngStream
from ggplds.state import (
    GgpState,
    Hyperparameters,
    LatentTrajectory,
    ModelState,
    ObservationState,
    TimeSeriesData,
    TransitionState,
    init_random,
    validate_sample,
)


def build_state(V=1, S=1, K=1, T=2, kind="gaussian", **hyper_kw):
    hyper_kw.setdefault("iters", 10)
    hyper_kw.setdefault("burnin", 5)
    hyper_kw.setdefault("thin", 1)
    hyper = Hyperparameters(V=V, K=K, S=S, observation_kind=kind, **hyper_kw)
    ggp = GgpState(
        r=np.ones(K), theta=np.ones((S, K)), psi=np.ones((S, K)),
        rho=np.ones(S), tau=np.ones(S), e=np.ones(K), f=np.ones(K),
    )
    trans = TransitionState(
        W=np.zeros((S, S)), Z=np.zeros((S, S), dtype=np.int8),
        M=np.zeros((S, S), dtype=np.int64),
        m_split=np.zeros((S, S, K), dtype=np.int64),
        varphi=np.ones((S, S)), lam=np.ones(S),
    )
    if kind == "gaussian":
        obs = ObservationState(D=np.ones((V, S)), gaussian_precision=np.eye(V))
    else:
        obs = ObservationState(D=np.ones((V, S)), nb_dispersion=1.0, alpha_eta=1.0,
                               beta_eta=1.0, pg_aux=np.ones((V, T)))
    traj = LatentTrajectory(X=np.zeros((S, T)), x0=np.zeros(S))
    return ModelState(hyper=hyper, ggp=ggp, trans=trans, obs=obs, traj=traj)


def redraws(update, base_state, pick, n=4000, seed=0, data=None):
    """Apply `update` n times to fresh copies of base_state; collect pick(state)."""
    rng = RngStream(seed)
    out = []
    for _ in range(n):
        s = copy.deepcopy(base_state)
        if data is None:
            update(s, rng)
        else:
            update(s, data, rng)
        out.append(pick(s))
    return np.asarray(out)


class TestPgAuxiliaries:
    def test_mean_at_origin(self):
        # y = 0, eta = 1, D x = 0: omega ~ PG(1, 0), mean 1/4
        s = build_state(V=1, S=1, T=200, kind="negative_binomial")
        Y = np.zeros((1, 200))
        draws = redraws(update_pg_auxiliaries, s, lambda st: st.obs.pg_aux.ravel(),
                        n=50, data=Y)
        assert abs(draws.mean() - 0.25) / 0.25 < 0.02

    def test_mean_tilted(self):
        # y = 3, eta = 2, xi = 1: omega ~ PG(5, 1), mean (5/2) tanh(1/2)
        s = build_state(V=1, S=1, T=200, kind="negative_binomial")
        s.obs.nb_dispersion = 2.0
        s.traj.X[:] = 1.0
        Y = np.full((1, 200), 3.0)
        target = 2.5 * np.tanh(0.5)
        draws = redraws(update_pg_auxiliaries, s, lambda st: st.obs.pg_aux.ravel(),
                        n=50, data=Y)
        assert abs(draws.mean() - target) / target < 0.02

    def test_mode_error(self):
        s = build_state()
        with pytest.raises(ModeError):
            update_pg_auxiliaries(s, np.zeros((1, 2)), RngStream(0))


class TestLatentStates:
    def test_terminal_scalar_posterior(self):
        # S = V = 1, Phi = 1, Lambda = 1, W o Z = 0, D = 1, y_T = 2:
        # precision d^2 Phi + lam = 2, mean = 2/2 = 1, variance 0.5
        s = build_state(T=2)
        Y = np.array([[0.0, 2.0]])
        draws = redraws(update_latent_states, s, lambda st: st.traj.X[0, 1],
                        n=4000, data=Y)
        assert abs(draws.mean() - 1.0) < 4 * np.sqrt(0.5 / 4000)
        assert abs(draws.var() - 0.5) < 0.06

    def test_no_data_reduces_to_transition_prior(self):
        # D = 0: x_T | x_{T-1} ~ N(0.5 x_{T-1}, 1), so the residual
        # x_T - 0.5 x_{T-1} is standard normal
        s = build_state(T=2)
        s.obs.D[:] = 0.0
        s.trans.W[:] = 0.5
        s.trans.Z[:] = 1
        s.trans.M[:] = 1
        s.trans.m_split[:, :, 0] = 1
        Y = np.zeros((1, 2))
        pairs = redraws(update_latent_states, s,
                        lambda st: (st.traj.X[0, 0], st.traj.X[0, 1]), n=4000, data=Y)
        resid = pairs[:, 1] - 0.5 * pairs[:, 0]
        assert abs(resid.mean()) < 4 * np.sqrt(1.0 / 4000)
        assert abs(resid.var() - 1.0) < 0.08

    def test_x0_prior_when_uncoupled(self):
        # W o Z = 0 and no observation on x0: posterior is N(m0, H0^{-1}) = N(0, 1)
        s = build_state(T=2)
        s.obs.D[:] = 0.0
        draws = redraws(update_latent_states, s, lambda st: st.traj.x0[0],
                        n=4000, data=np.zeros((1, 2)))
        assert abs(draws.mean()) < 4 * np.sqrt(1.0 / 4000)
        assert abs(draws.var() - 1.0) < 0.08


class TestLoadings:
    def test_scalar_posterior(self):
        # V = S = 1, Phi = 1, sum x^2 = 4, sum x y = 2:
        # E = 1/(4 + 1) = 0.2, m = 0.2 * 2 = 0.4
        s = build_state(T=4)
        s.traj.X[:] = 1.0
        Y = np.full((1, 4), 0.5)
        draws = redraws(update_loadings, s, lambda st: st.obs.D[0, 0], n=4000, data=Y)
        assert abs(draws.mean() - 0.4) < 4 * np.sqrt(0.2 / 4000)
        assert abs(draws.var() - 0.2) < 0.03

    def test_prior_fallback_zero_states(self):
        # x_s == 0: posterior is the prior N(0, 1/sqrt(V)) with V = 4
        s = build_state(V=4, T=3)
        s.obs.D[:] = 0.5
        Y = np.ones((4, 3))
        draws = redraws(update_loadings, s, lambda st: st.obs.D[:, 0], n=2000, data=Y)
        assert abs(draws.mean()) < 0.03
        assert abs(draws.var() - 0.5) < 0.05

    def test_nb_prior_fallback(self):
        # omega -> 0 with y = eta kills both data terms: N(0, 1/sqrt(V))
        s = build_state(V=1, T=3, kind="negative_binomial")
        s.obs.nb_dispersion = 2.0
        s.obs.pg_aux[:] = 1e-14
        s.traj.X[:] = 1.0
        Y = np.full((1, 3), 2.0)
        draws = redraws(update_loadings, s, lambda st: st.obs.D[0, 0], n=4000, data=Y)
        assert abs(draws.mean()) < 0.07
        assert abs(draws.var() - 1.0) < 0.08


class TestObsPrecision:
    def test_scalar_inverse_mean(self):
        # V = 1, scale 1, T = 2, residuals (1, 1): Phi^{-1} ~ IW(3, 5),
        # E[Phi^{-1}] = 3/(5-2) = 1
        s = build_state(T=2)
        s.obs.D[:] = 0.0
        Y = np.ones((1, 2))
        draws = redraws(update_obs_precision, s,
                        lambda st: 1.0 / st.obs.gaussian_precision[0, 0], n=4000, data=Y)
        # Var[IW(3,5) scalar] = 2 * 3^2 / ((5-2)^2 (5-4)) = 2
        assert abs(draws.mean() - 1.0) < 4 * np.sqrt(2.0 / 4000)

    def test_mode_error(self):
        s = build_state(kind="negative_binomial")
        with pytest.raises(ModeError):
            update_obs_precision(s, np.zeros((1, 2)), RngStream(0))


class TestTransitionWeights:
    def test_masked_prior(self):
        # z = 0 everywhere: w ~ N(0, 1/varphi) with varphi = 4
        s = build_state(S=6, T=3)
        s.trans.varphi[:] = 4.0
        s.traj.X[:] = 1.0
        draws = redraws(update_transition_weights, s, lambda st: st.trans.W.ravel(),
                        n=200)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 0.25) < 0.02

    def test_scalar_posterior(self):
        # z = 1, lam = 1, T_j = 4, Q = 2, varphi = 1: variance 1/5, mean 2/5
        s = build_state(S=1, T=2)
        s.trans.Z[:] = 1
        s.trans.M[:] = 1
        s.trans.m_split[:, :, 0] = 1
        root3 = np.sqrt(3.0)
        s.traj.x0[:] = root3
        s.traj.X[0, 0] = 1.0
        s.traj.X[0, 1] = 2.0 - root3
        # lag = (sqrt(3), 1): T_j = 4; Q = x1*x0 + x2*x1 = sqrt(3) + 2 - sqrt(3) = 2
        draws = redraws(update_transition_weights, s, lambda st: st.trans.W[0, 0],
                        n=4000)
        assert abs(draws.mean() - 0.4) < 4 * np.sqrt(0.2 / 4000)
        assert abs(draws.var() - 0.2) < 0.03

    def test_zero_states_prior(self):
        s = build_state(S=3, T=3)
        s.trans.Z[:] = 1
        s.trans.M[:] = 1
        s.trans.m_split[:, :, 0] = 1
        draws = redraws(update_transition_weights, s, lambda st: st.trans.W.ravel(),
                        n=500)
        assert abs(draws.var() - 1.0) < 0.05


class TestMask:
    def test_prior_recovery_at_zero_weight(self):
        # w = 0: P(z = 1) = 1 - e^{-rate} with rate = 1
        s = build_state(S=4, T=3)
        s.traj.X[:] = 1.0
        s.traj.x0[:] = 1.0
        p = 1.0 - np.exp(-1.0)
        draws = redraws(update_mask, s, lambda st: st.trans.Z.ravel(), n=800)
        freq = draws.mean()
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / draws.size)

    def test_scalar_odds(self):
        # w^2 T lam - 2 w lam Q = 2 and rate = 1:
        # P(z=1) = (1 - e^{-1}) / (1 - e^{-1} + 1)
        s = build_state(S=1, T=2)
        s.trans.W[0, 0] = 1.0
        s.trans.lam[:] = 2.0
        s.traj.x0[:] = 1.0
        s.traj.X[0, 0] = 0.0
        s.traj.X[0, 1] = 5.0  # multiplies x1 = 0 in Q, so Q = 0
        target = (1 - np.exp(-1.0)) / (2.0 - np.exp(-1.0))
        assert abs(target - 0.38726) < 1e-4
        draws = redraws(update_mask, s, lambda st: st.trans.Z[0, 0], n=6000)
        assert abs(draws.mean() - target) < 4 * np.sqrt(target * (1 - target) / 6000)

    def test_vanishing_rate(self):
        s = build_state(S=3, T=3)
        s.ggp.r[:] = 1e-12
        s.traj.X[:] = 1.0
        draws = redraws(update_mask, s, lambda st: st.trans.Z.sum(), n=300)
        assert draws.sum() == 0


class TestEdgeCounts:
    def test_masked_cells_zero(self):
        s = build_state(S=3)
        s.trans.Z[:] = 0
        update_edge_counts(s, RngStream(0))
        assert s.trans.M.sum() == 0
        assert s.trans.m_split.sum() == 0

    def test_single_community_split(self):
        s = build_state(S=2, K=1)
        s.trans.Z[:] = 1
        update_edge_counts(s, RngStream(1))
        assert np.array_equal(s.trans.m_split[:, :, 0], s.trans.M)
        assert np.all(s.trans.M >= 1)

    def test_truncated_mean(self):
        # rate 1 on active cells: E[m] = 1/(1 - e^{-1})
        s = build_state(S=1)
        s.trans.Z[:] = 1
        draws = redraws(update_edge_counts, s, lambda st: st.trans.M[0, 0], n=20000)
        target = 1.0 / (1.0 - np.exp(-1.0))
        assert abs(draws.mean() - target) < 0.02

    def test_split_proportions(self):
        s = build_state(S=1, K=2)
        s.trans.Z[:] = 1
        s.ggp.r[:] = [2.0, 1.0]
        draws = redraws(update_edge_counts, s,
                        lambda st: (st.trans.m_split[0, 0, 0], st.trans.M[0, 0]), n=20000)
        share = draws[:, 0].sum() / draws[:, 1].sum()
        assert abs(share - 2.0 / 3.0) < 0.01


class TestCommunityParams:
    def test_theta_counts_posterior(self):
        # rho = 1, e = 1, r = 1, sum psi = 2, row counts 3: Gamma(4, 1/3)
        s = build_state(S=2, K=1)
        s.trans.m_split[0, 0, 0] = 2
        s.trans.m_split[0, 1, 0] = 1
        s.trans.M = s.trans.m_split.sum(axis=2)
        s.trans.Z = (s.trans.M >= 1).astype(np.int8)
        draws = redraws(update_community_params, s, lambda st: st.ggp.theta[0, 0],
                        n=4000)
        assert abs(draws.mean() - 4.0 / 3.0) < 4 * np.sqrt((4.0 / 9.0) / 4000)

    def test_theta_prior_shape_no_counts(self):
        # no counts: Gamma(rho, 1/(e + r sum psi)) = Gamma(1, 1/3)
        s = build_state(S=2, K=1)
        draws = redraws(update_community_params, s, lambda st: st.ggp.theta[0, 0],
                        n=4000)
        assert abs(draws.mean() - 1.0 / 3.0) < 4 * np.sqrt((1.0 / 9.0) / 4000)


class TestNodeWeights:
    def test_rho_scale_includes_log_term(self):
        # K = 1, r = 1, sum psi = 1, e = 1: p = 1/2 and the scale denominator
        # is c_rho + ln 2; with zero counts rho ~ Gamma(gamma0/S, 1/(1 + ln 2))
        s = build_state(S=2, K=1)
        s.ggp.psi[:, 0] = [0.4, 0.6]
        target_mean = 0.5 / (1.0 + np.log(2.0))
        draws = redraws(update_node_weights, s, lambda st: st.ggp.rho[0], n=4000)
        se = draws.std() / np.sqrt(len(draws))
        assert abs(draws.mean() - target_mean) < 4 * se

    def test_counts_force_tables(self):
        # a single count gives exactly one table: shape gamma0/S + 1
        s = build_state(S=2, K=1)
        s.ggp.psi[:, 0] = [0.4, 0.6]
        s.trans.m_split[0, 0, 0] = 1
        s.trans.M = s.trans.m_split.sum(axis=2)
        s.trans.Z = (s.trans.M >= 1).astype(np.int8)
        target_mean = 1.5 / (1.0 + np.log(2.0))
        draws = redraws(update_node_weights, s, lambda st: st.ggp.rho[0], n=4000)
        se = draws.std() / np.sqrt(len(draws))
        assert abs(draws.mean() - target_mean) < 4 * se


class TestScales:
    def test_lambda_zero_residuals(self):
        # a = 1, T = 10, zero residuals: Gamma(6, 1/b) with b = 0.1
        s = build_state(T=10)
        draws = redraws(update_scales, s, lambda st: st.trans.lam[0], n=4000)
        assert abs(draws.mean() - 60.0) < 4 * np.sqrt(600.0 / 4000)

    def test_varphi_zero_weight(self):
        # w = 0: Gamma(alpha0 + 1/2, 1/beta0) with alpha0 = beta0 = 1
        s = build_state(S=4)
        draws = redraws(update_scales, s, lambda st: st.trans.varphi.ravel(), n=500)
        assert abs(draws.mean() - 1.5) < 0.05

    def test_e_posterior(self):
        # sum rho = 2, sum theta = 3, alpha0 = beta0 = 1: Gamma(3, 1/4)
        s = build_state(S=2, K=1)
        s.ggp.theta[:, 0] = [1.0, 2.0]
        draws = redraws(update_scales, s, lambda st: st.ggp.e[0], n=4000)
        assert abs(draws.mean() - 0.75) < 4 * np.sqrt((3.0 / 16.0) / 4000)


class TestSweep:
    @pytest.mark.parametrize("kind", ["gaussian", "negative_binomial"])
    def test_invariants_preserved(self, kind):
        hyper = Hyperparameters(V=2, K=3, S=4, iters=10, burnin=5, thin=1,
                                observation_kind=kind)
        rng = RngStream(77)
        state = init_random(hyper, (2, 9), rng)
        Y = np.abs(np.random.default_rng(0).standard_normal((2, 9)))
        if kind == "negative_binomial":
            Y = np.round(Y * 3)
        for _ in range(25):
            gibbs_sweep(state, Y, rng)
            assert validate_sample(state.snapshot(0)) == []

    def test_determinism(self):
        hyper = Hyperparameters(V=2, K=2, S=3, iters=10, burnin=5, thin=1)
        Y = np.random.default_rng(1).standard_normal((2, 8))
        runs = []
        for _ in range(2):
            rng = RngStream(123, 4)
            state = init_random(hyper, (2, 8), rng)
            for _ in range(5):
                gibbs_sweep(state, Y, rng)
            runs.append(state)
        assert np.array_equal(runs[0].traj.X, runs[1].traj.X)
        assert np.array_equal(runs[0].trans.W, runs[1].trans.W)
        assert np.array_equal(runs[0].ggp.r, runs[1].ggp.r)

    def test_everything_moves(self):
        hyper = Hyperparameters(V=1, K=1, S=1, iters=10, burnin=5, thin=1)
        rng = RngStream(5)
        state = init_random(hyper, (1, 2), rng)
        before = copy.deepcopy(state)
        gibbs_sweep(state, np.array([[0.3, -0.1]]), rng)
        assert state.traj.X[0, 0] != before.traj.X[0, 0]
        assert state.trans.W[0, 0] != before.trans.W[0, 0]
        assert state.ggp.r[0] != before.ggp.r[0]
        assert state.trans.lam[0] != before.trans.lam[0]


class TestChain:
    def test_schedule_counts(self):
        hyper = Hyperparameters(V=1)
        its = scheduled_iterations(hyper)
        assert len(its) == 50
        assert its[0] == 3060 and its[-1] == 6000

    def test_schedule_thin_one(self):
        hyper = Hyperparameters(V=1, iters=3, burnin=0, thin=1)
        assert scheduled_iterations(hyper) == [1, 2, 3]

    def test_burnin_precondition(self):
        with pytest.raises(ValueError, match="burnin"):
            Hyperparameters(V=1, iters=10, burnin=10)

    def test_run_chain_end_to_end(self):
        hyper = Hyperparameters(V=2, K=2, S=3, iters=30, burnin=10, thin=5)
        data = TimeSeriesData(Y=np.random.default_rng(2).standard_normal((2, 12)))
        records = []
        samples = run_chain(data, hyper, RngStream(9), progress=records.append,
                            progress_every=10)
        assert len(samples) == 4  # iterations 15, 20, 25, 30
        assert [s.iteration for s in samples] == [15, 20, 25, 30]
        assert all(validate_sample(s) == [] for s in samples)
        assert records and all("log_joint" in r for r in records)

    def test_run_chain_determinism(self):
        hyper = Hyperparameters(V=1, K=2, S=2, iters=12, burnin=4, thin=4)
        data = TimeSeriesData(Y=np.random.default_rng(3).standard_normal((1, 6)))
        a = run_chain(data, hyper, RngStream(31))
        b = run_chain(data, hyper, RngStream(31))
        assert all(np.array_equal(x.traj.X, y.traj.X) for x, y in zip(a, b))
