"""Full-conditional Gibbs updates, the sweep, and the chain driver.

Each update_* mutates the ModelState in place, drawing from the exact
conditional of its block given the current values of everything else.
Auxiliary variables (Polya-Gamma weights, table counts) are refreshed
within the sweep before the blocks that use them and condition nothing
else, so every kernel leaves the joint posterior invariant.
"""

import logging

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, gammaln

from .errors import ChainAborted, ModeError, ParameterError, SingularMatrixError
from .prior import lagged_states
from .samplers import (
    RngStream,
    chol_precision,
    sample_crt,
    sample_polya_gamma,
    sample_truncated_poisson,
    sample_wishart,
)
from .state import (
    GAUSSIAN,
    NEGATIVE_BINOMIAL,
    POSITIVE_FLOOR,
    ModelState,
    TimeSeriesData,
    init_random,
)

logger = logging.getLogger("ggplds")

SWEEP_STEPS = (
    "pg_auxiliaries",
    "latent_states",
    "loadings",
    "dispersion",
    "obs_precision",
    "transition_weights",
    "mask",
    "edge_counts",
    "community_params",
    "node_weights",
    "scales",
)


def _data_matrix(data):
    return data.Y if isinstance(data, TimeSeriesData) else np.asarray(data, dtype=float)


def _require_kind(state, kind, op):
    if state.obs.kind != kind:
        raise ModeError(f"{op} applies to the {kind} observation model only")


def _canonical_draw(L, h, g):
    """One draw from N(P^{-1} h, P^{-1}) given L = chol(P)."""
    w = solve_triangular(L, h, lower=True, check_finite=False)
    return solve_triangular(L, w + g.standard_normal(h.shape[0]), trans="T",
                            lower=True, check_finite=False)


def _floor(arr):
    return np.maximum(arr, POSITIVE_FLOOR)


def update_pg_auxiliaries(state: ModelState, data, rng: RngStream):
    """Polya-Gamma weights, one per observed cell, tilted by the linear predictor."""
    _require_kind(state, NEGATIVE_BINOMIAL, "update_pg_auxiliaries")
    Y = _data_matrix(data)
    xi = state.obs.D @ state.traj.X
    state.obs.pg_aux = sample_polya_gamma(Y + state.obs.nb_dispersion, xi, rng)


def update_latent_states(state: ModelState, data, rng: RngStream):
    """Single-site draws of x_0, x_1, ..., x_T in increasing time order.

    Interior states see both neighbours plus the data term; the final state
    drops the forward coupling and x_0 has no data term at all.
    """
    Y = _data_matrix(data)
    hyper, trans, traj, obs = state.hyper, state.trans, state.traj, state.obs
    S, T = traj.X.shape
    g = rng.gen
    A = trans.W * trans.Z
    lam = trans.lam
    G = (A * lam[:, None]).T @ A
    AtLam = A.T * lam[None, :]
    gaussian = obs.kind == GAUSSIAN

    if gaussian:
        DtPhi = obs.D.T @ obs.gaussian_precision
        P_data = DtPhi @ obs.D
        B = DtPhi @ Y
        L_int = chol_precision(P_data + np.diag(lam) + G)
        L_end = chol_precision(P_data + np.diag(lam))
    else:
        B = obs.D.T @ ((Y - state.obs.nb_dispersion) / 2.0)
        base_int = np.diag(lam) + G
        base_end = np.diag(lam)
        omega = obs.pg_aux

    h0 = hyper.H0 @ hyper.m0 + AtLam @ traj.X[:, 0]
    traj.x0 = _canonical_draw(chol_precision(hyper.H0 + G), h0, g)

    prev = traj.x0
    for t in range(T):
        drive = lam * (A @ prev)
        if t < T - 1:
            h = B[:, t] + drive + AtLam @ traj.X[:, t + 1]
            if gaussian:
                L = L_int
            else:
                L = chol_precision(obs.D.T @ (omega[:, t, None] * obs.D) + base_int)
        else:
            h = B[:, t] + drive
            if gaussian:
                L = L_end
            else:
                L = chol_precision(obs.D.T @ (omega[:, t, None] * obs.D) + base_end)
        prev = _canonical_draw(L, h, g)
        traj.X[:, t] = prev


def update_loadings(state: ModelState, data, rng: RngStream):
    """Column-wise loading draws, residualizing the other columns."""
    Y = _data_matrix(data)
    obs, traj = state.obs, state.traj
    V, S = obs.D.shape
    X = traj.X
    g = rng.gen
    sqrtV = np.sqrt(V)
    T_s = (X**2).sum(axis=1)

    if obs.kind == GAUSSIAN:
        Phi = obs.gaussian_precision
        R = Y - obs.D @ X
        eyeV = sqrtV * np.eye(V)
        for s in range(S):
            c = R @ X[s] + T_s[s] * obs.D[:, s]
            L = chol_precision(T_s[s] * Phi + eyeV)
            d_new = _canonical_draw(L, Phi @ c, g)
            R -= np.outer(d_new - obs.D[:, s], X[s])
            obs.D[:, s] = d_new
    else:
        omega = obs.pg_aux
        half = (Y - obs.nb_dispersion) / 2.0
        P = obs.D @ X
        for s in range(S):
            denom = omega @ (X[s] ** 2) + sqrtV  # diagonal posterior precision
            u = (half - omega * P) @ X[s] + (denom - sqrtV) * obs.D[:, s]
            d_new = u / denom + g.standard_normal(V) / np.sqrt(denom)
            P += np.outer(d_new - obs.D[:, s], X[s])
            obs.D[:, s] = d_new


def update_dispersion(state: ModelState, data, rng: RngStream):
    """Table-count augmentation for the count layer, then the gamma draws.

    The shape-hyperparameter draw marginalizes the dispersion, so the
    dispersion is redrawn immediately afterwards, before its rate
    hyperparameter (which conditions on it) is updated; any other order
    leaves the collapsed variable stale and biases the joint.
    """
    _require_kind(state, NEGATIVE_BINOMIAL, "update_dispersion")
    Y = _data_matrix(data)
    hyper, obs = state.hyper, state.obs
    xi = obs.D @ state.traj.X
    zeta_sum = np.logaddexp(0.0, xi).sum()

    l3_total = int(sample_crt(np.round(Y).astype(np.int64), obs.nb_dispersion, rng).sum())
    l4 = int(sample_crt(l3_total, obs.alpha_eta, rng))
    # -ln(1 - p~) with p~ = zeta_sum / (beta_eta + zeta_sum)
    neglog1mp = np.log1p(zeta_sum / obs.beta_eta)
    obs.alpha_eta = float(_floor(rng.gen.gamma(hyper.alpha0 + l4,
                                               1.0 / (hyper.beta0 + neglog1mp))))
    obs.nb_dispersion = float(_floor(rng.gen.gamma(obs.alpha_eta + l3_total,
                                                   1.0 / (obs.beta_eta + zeta_sum))))
    obs.beta_eta = float(_floor(rng.gen.gamma(hyper.alpha0 + obs.alpha_eta,
                                              1.0 / (hyper.beta0 + obs.nb_dispersion))))


def update_obs_precision(state: ModelState, data, rng: RngStream):
    """Observation precision from the conjugate Wishart form on the residuals."""
    _require_kind(state, GAUSSIAN, "update_obs_precision")
    Y = _data_matrix(data)
    V, T = Y.shape
    resid = Y - state.obs.D @ state.traj.X
    G = resid @ resid.T
    scale_mat = G + state.hyper.wishart_scale
    scale_mat = 0.5 * (scale_mat + scale_mat.T)
    try:
        L = chol_precision(scale_mat)
    except SingularMatrixError:
        logger.warning("observation-precision scale not SPD; retrying after symmetrization")
        scale_mat = 0.5 * (scale_mat + scale_mat.T) + 1e-12 * np.eye(V)
        L = chol_precision(scale_mat)
    inv = solve_triangular(L, np.eye(V), lower=True, check_finite=False)
    inv_scale = inv.T @ inv
    state.obs.gaussian_precision = sample_wishart(0.5 * (inv_scale + inv_scale.T), V + 2 + T, rng)


def update_transition_weights(state: ModelState, rng: RngStream):
    """Per-cell weight draws; masked cells fall back to their prior."""
    trans, traj = state.trans, state.traj
    S = trans.W.shape[0]
    g = rng.gen
    X_lag = lagged_states(traj)
    T_j = (X_lag**2).sum(axis=1)
    E = traj.X - (trans.W * trans.Z) @ X_lag
    lam = trans.lam
    for j in range(S):
        xj = X_lag[j]
        zj = trans.Z[:, j]
        q = E @ xj + trans.W[:, j] * zj * T_j[j]
        var = 1.0 / (zj * lam * T_j[j] + trans.varphi[:, j])
        mean = var * (zj * lam * q)
        w_new = mean + np.sqrt(var) * g.standard_normal(S)
        E -= np.outer((w_new - trans.W[:, j]) * zj, xj)
        trans.W[:, j] = w_new


def _log1mexp(lam):
    """log(1 - exp(-lam)) for lam > 0, stable over the whole range."""
    with np.errstate(divide="ignore"):
        return np.where(
            lam > np.log(2.0),
            np.log1p(-np.exp(-lam)),
            np.log(-np.expm1(-np.maximum(lam, POSITIVE_FLOOR))),
        )


def update_mask(state: ModelState, rng: RngStream):
    """Spike-and-slab mask draws with prior odds from the graph rates,
    computed in log space."""
    ggp, trans, traj = state.ggp, state.trans, state.traj
    S = trans.Z.shape[0]
    g = rng.gen
    X_lag = lagged_states(traj)
    T_j = (X_lag**2).sum(axis=1)
    E = traj.X - (trans.W * trans.Z) @ X_lag
    lam = trans.lam
    rate = (ggp.theta * ggp.r) @ ggp.psi.T  # (S, S) summed community rates
    log_p1_prior = _log1mexp(rate)
    for j in range(S):
        xj = X_lag[j]
        wj = trans.W[:, j]
        q = E @ xj + wj * trans.Z[:, j] * T_j[j]
        loglik = -0.5 * lam * (wj**2 * T_j[j] - 2.0 * wj * q)
        logodds = loglik + log_p1_prior[:, j] + rate[:, j]  # minus log p0 = rate
        p1 = expit(logodds)
        z_new = (g.random(S) < p1).astype(np.int8)
        E -= np.outer((z_new - trans.Z[:, j]) * wj, xj)
        trans.Z[:, j] = z_new


def update_edge_counts(state: ModelState, rng: RngStream):
    """Latent counts: zero where masked, zero-truncated Poisson where active,
    then the multinomial split across communities."""
    ggp, trans = state.ggp, state.trans
    S, _, K = trans.m_split.shape
    rates_k = np.einsum("k,ik,jk->ijk", ggp.r, ggp.theta, ggp.psi)
    rate = rates_k.sum(axis=2)
    active = trans.Z == 1

    M = np.zeros((S, S), dtype=np.int64)
    m_split = np.zeros((S, S, K), dtype=np.int64)
    if active.any():
        M[active] = sample_truncated_poisson(np.maximum(rate[active], POSITIVE_FLOOR), rng)
        w = rates_k[active]
        w_sum = w.sum(axis=1, keepdims=True)
        degenerate = (w_sum <= 0).ravel()
        pvals = np.where(w_sum > 0, w / np.maximum(w_sum, POSITIVE_FLOOR), 1.0 / K)
        if degenerate.any():
            pvals[degenerate] = 1.0 / K
        m_split[active] = rng.gen.multinomial(M[active], pvals)
    trans.M = M
    trans.m_split = m_split


def _update_theta(state, rng):
    ggp, trans = state.ggp, state.trans
    m_out = trans.m_split.sum(axis=1)  # (S, K) counts on rows
    ggp.theta = _floor(rng.gen.gamma(
        ggp.rho[:, None] + m_out,
        1.0 / (ggp.e + ggp.r * ggp.psi.sum(axis=0))[None, :],
    ))


def _update_psi(state, rng):
    ggp, trans = state.ggp, state.trans
    m_in = trans.m_split.sum(axis=0)  # (S, K) counts on columns
    ggp.psi = _floor(rng.gen.gamma(
        ggp.tau[:, None] + m_in,
        1.0 / (ggp.f + ggp.r * ggp.theta.sum(axis=0))[None, :],
    ))


def _update_r(state, rng):
    ggp, trans = state.ggp, state.trans
    K = ggp.r.shape[0]
    ggp.r = _floor(rng.gen.gamma(
        state.hyper.gamma0 / K + trans.m_split.sum(axis=(0, 1)),
        1.0 / (state.hyper.c + ggp.theta.sum(axis=0) * ggp.psi.sum(axis=0)),
    ))


def update_community_params(state: ModelState, rng: RngStream):
    """Affiliations and community weights in the order theta, psi, r."""
    _update_theta(state, rng)
    _update_psi(state, rng)
    _update_r(state, rng)


def _stable_ratio(num, den, what):
    ratio = num / den
    bad = ~np.isfinite(ratio)
    if bad.any():
        logger.warning("%s success-probability hit 1 numerically; clamped", what)
        ratio = np.where(bad, 1e12, ratio)
    return ratio


def _update_rho(state, rng):
    """Row node weights; the affiliations theta are marginalized out here,
    so the caller must redraw theta before anything conditions on it."""
    hyper, ggp, trans = state.hyper, state.ggp, state.trans
    S = ggp.rho.shape[0]
    l1 = sample_crt(trans.m_split.sum(axis=1), ggp.rho[:, None], rng)
    # -sum_k ln(1 - p1_k) with p1_k = r sum(psi) / (e + r sum(psi))
    ratio = _stable_ratio(ggp.r * ggp.psi.sum(axis=0), ggp.e, "rho")
    denom = hyper.c_rho + np.log1p(ratio).sum()
    ggp.rho = _floor(rng.gen.gamma(hyper.gamma0 / S + l1.sum(axis=1), 1.0 / denom))


def _update_tau(state, rng):
    """Column node weights; psi is marginalized out, same caveat as _update_rho."""
    hyper, ggp, trans = state.hyper, state.ggp, state.trans
    S = ggp.tau.shape[0]
    l2 = sample_crt(trans.m_split.sum(axis=0), ggp.tau[:, None], rng)
    ratio = _stable_ratio(ggp.r * ggp.theta.sum(axis=0), ggp.f, "tau")
    denom = hyper.c_tau + np.log1p(ratio).sum()
    ggp.tau = _floor(rng.gen.gamma(hyper.gamma0 / S + l2.sum(axis=1), 1.0 / denom))


def update_node_weights(state: ModelState, rng: RngStream):
    """Node weights via table-count augmentation of the per-node count sums."""
    _update_rho(state, rng)
    _update_tau(state, rng)


def update_scales(state: ModelState, rng: RngStream):
    """Affiliation scales, state-noise precisions, and weight precisions."""
    hyper, ggp, trans, traj = state.hyper, state.ggp, state.trans, state.traj
    g = rng.gen
    T = traj.X.shape[1]

    ggp.e = _floor(g.gamma(hyper.alpha0 + ggp.rho.sum(),
                           1.0 / (hyper.beta0 + ggp.theta.sum(axis=0))))
    ggp.f = _floor(g.gamma(hyper.alpha0 + ggp.tau.sum(),
                           1.0 / (hyper.beta0 + ggp.psi.sum(axis=0))))
    resid = traj.X - (trans.W * trans.Z) @ lagged_states(traj)
    trans.lam = _floor(g.gamma(hyper.a + T / 2.0,
                               1.0 / (hyper.b + (resid**2).sum(axis=1) / 2.0)))
    trans.varphi = _floor(g.gamma(hyper.alpha0 + 0.5,
                                  1.0 / (hyper.beta0 + trans.W**2 / 2.0)))


def gibbs_sweep(state: ModelState, data, rng: RngStream, skip=()):
    """One full sweep over every conditional, in a fixed order.

    Auxiliaries come before the variables they augment and the graph
    variables follow the transition weights and mask. The node-weight
    draws marginalize the corresponding affiliations, so each is followed
    immediately by that affiliation's redraw (rho, theta, tau, psi, r);
    separating these into two blocks leaves the marginalized variable
    stale while later conditionals still use it, which fails the
    joint-distribution correctness test. `skip` names steps to omit and
    exists for sampler-correctness mutation testing only.
    """
    nb = state.obs.kind == NEGATIVE_BINOMIAL
    if nb and "pg_auxiliaries" not in skip:
        update_pg_auxiliaries(state, data, rng)
    if "latent_states" not in skip:
        update_latent_states(state, data, rng)
    if "loadings" not in skip:
        update_loadings(state, data, rng)
    if nb:
        if "dispersion" not in skip:
            update_dispersion(state, data, rng)
    elif "obs_precision" not in skip:
        update_obs_precision(state, data, rng)
    if "transition_weights" not in skip:
        update_transition_weights(state, rng)
    if "mask" not in skip:
        update_mask(state, rng)
    if "edge_counts" not in skip:
        update_edge_counts(state, rng)
    if "node_weights" not in skip and "community_params" not in skip:
        _update_rho(state, rng)
        _update_theta(state, rng)
        _update_tau(state, rng)
        _update_psi(state, rng)
        _update_r(state, rng)
    elif "node_weights" in skip and "community_params" not in skip:
        update_community_params(state, rng)
    elif "community_params" in skip and "node_weights" not in skip:
        update_node_weights(state, rng)
    if "scales" not in skip:
        update_scales(state, rng)
    return state


def log_joint_surrogate(state: ModelState, data) -> float:
    """Observation plus transition log-likelihood at the current state.

    A monitoring quantity for progress logs, not the full joint (prior terms
    over the graph block are omitted).
    """
    Y = _data_matrix(data)
    traj, trans, obs = state.traj, state.trans, state.obs
    T = Y.shape[1]
    if obs.kind == GAUSSIAN:
        resid = Y - obs.D @ traj.X
        sign, logdet = np.linalg.slogdet(obs.gaussian_precision)
        ll_obs = 0.5 * T * logdet - 0.5 * np.einsum("vt,vw,wt->", resid, obs.gaussian_precision, resid)
    else:
        xi = obs.D @ traj.X
        eta = obs.nb_dispersion
        ll_obs = float(
            (gammaln(Y + eta) - gammaln(eta) - gammaln(Y + 1.0)
             + Y * xi - (Y + eta) * np.logaddexp(0.0, xi)).sum()
        )
    resid_x = traj.X - (trans.W * trans.Z) @ lagged_states(traj)
    ll_trans = 0.5 * T * np.log(trans.lam).sum() - 0.5 * (trans.lam @ (resid_x**2).sum(axis=1))
    return float(ll_obs + ll_trans)


def progress_record(state: ModelState, data, iteration: int) -> dict:
    active = int((state.trans.m_split.sum(axis=(0, 1)) > 0).sum())
    return {
        "iteration": iteration,
        "log_joint": log_joint_surrogate(state, data),
        "edges": int(state.trans.Z.sum()),
        "active_communities": active,
    }


def scheduled_iterations(hyper) -> list:
    """Iterations (1-based) whose states are retained as posterior samples."""
    return [
        it
        for it in range(1, hyper.iters + 1)
        if it > hyper.burnin and (it - hyper.burnin) % hyper.thin == 0
    ]


def run_chain(data, hyper, rng: RngStream, progress=None, progress_every=50):
    """Run one chain: iterate sweeps, discard burn-in, thin, snapshot.

    Returns the list of immutable posterior samples. On numeric failure the
    chain aborts atomically, raising ChainAborted carrying the samples
    collected so far and the last state that completed a sweep.
    """
    if not isinstance(data, TimeSeriesData):
        data = TimeSeriesData(Y=np.asarray(data, dtype=float))
    hyper.validate()
    state = init_random(hyper, data.shape, rng)
    keep = set(scheduled_iterations(hyper))
    samples = []
    last_good = state.snapshot(0)
    for it in range(1, hyper.iters + 1):
        try:
            gibbs_sweep(state, data, rng)
        except (SingularMatrixError, ParameterError, FloatingPointError) as exc:
            raise ChainAborted(
                f"chain aborted at iteration {it}: {exc}",
                last_state=last_good,
                samples=samples,
                iteration=it,
            ) from exc
        last_good = state.snapshot(it)
        if progress is not None and (it % progress_every == 0 or it == 1 or it == hyper.iters):
            progress(progress_record(state, data, it))
        if it in keep:
            samples.append(last_good)
    return samples
