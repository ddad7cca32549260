"""The graph gamma process: truncated generative simulation, edge-count
statistics, community relative strengths, sub-sequence decomposition, and
the row/column reordering used to visualize overlapping communities.
"""

import os
from dataclasses import dataclass

import numpy as np

from .samplers import RngStream
from .state import GgpState, Hyperparameters, _floor_positive


def sample_prior_ggp(hyper: Hyperparameters, rng: RngStream, fixed_scales=False) -> GgpState:
    """Draw community weights and node affiliations from their priors.

    With fixed_scales the affiliation scales e, f are pinned at their prior
    mean alpha0/beta0 instead of drawn, matching the graph construction in
    which they are constants; the edge-count bound is stated for that case.
    """
    K, S = hyper.K, hyper.S
    g = rng.gen
    if fixed_scales:
        e = np.full(K, hyper.alpha0 / hyper.beta0)
        f = np.full(K, hyper.alpha0 / hyper.beta0)
    else:
        e = _floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0, size=K))
        f = _floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0, size=K))
    rho = _floor_positive(g.gamma(hyper.gamma0 / S, 1.0 / hyper.c_rho, size=S))
    tau = _floor_positive(g.gamma(hyper.gamma0 / S, 1.0 / hyper.c_tau, size=S))
    theta = _floor_positive(g.gamma(rho[:, None], 1.0 / e[None, :]))
    psi = _floor_positive(g.gamma(tau[:, None], 1.0 / f[None, :]))
    r = _floor_positive(g.gamma(hyper.gamma0 / K, 1.0 / hyper.c, size=K))
    return GgpState(r=r, theta=theta, psi=psi, rho=rho, tau=tau, e=e, f=f)


def poisson_rates(ggp: GgpState) -> np.ndarray:
    """Per-cell, per-community Poisson rates r_k theta_ik psi_jk, shape (S, S, K)."""
    return np.einsum("k,ik,jk->ijk", ggp.r, ggp.theta, ggp.psi)


def sample_prior_graph(ggp: GgpState, rng: RngStream):
    """Generate the latent count tensor and adjacency from the truncated prior.

    Returns (M, m_split, Z): counts summed over communities, the per-community
    split, and the thresholded binary adjacency. Matches the logical-OR
    construction over community-specific Bernoulli graphs in distribution.
    """
    rates = poisson_rates(ggp)
    m_split = rng.gen.poisson(rates).astype(np.int64)
    M = m_split.sum(axis=2)
    Z = (M >= 1).astype(np.int8)
    return M, m_split, Z


def edge_count_bound(hyper: Hyperparameters):
    """Analytic upper bound on the expected total edge count of the prior graph.

    Substitutes prior means into the truncated model: the community masses sum
    to gamma0/c in expectation, the node masses to gamma0/c_rho and
    gamma0/c_tau, and the affiliation scales have mean alpha0/beta0 each.
    Returns (value, formula).
    """
    gamma_rho = hyper.gamma0 / hyper.c_rho
    gamma_tau = hyper.gamma0 / hyper.c_tau
    e_mean = hyper.alpha0 / hyper.beta0
    f_mean = hyper.alpha0 / hyper.beta0
    value = hyper.gamma0 * gamma_rho * gamma_tau / (hyper.c * e_mean * f_mean)
    formula = (
        "gamma0 * (gamma0/c_rho) * (gamma0/c_tau) / (c * (alpha0/beta0)^2) = "
        f"{hyper.gamma0} * {gamma_rho} * {gamma_tau} / ({hyper.c} * {e_mean} * {f_mean})"
    )
    return value, formula


def community_strength(ggp: GgpState) -> np.ndarray:
    """Relative activation strength A_k, shape (K, S, S); sums to one over k.

    Computed in log space: the per-cell rates can underflow to zero when the
    shrinkage drives several factors toward the positivity floor, while their
    ratios stay well defined.
    """
    log_rates = (
        np.log(ggp.r)[:, None, None]
        + np.log(ggp.theta).T[:, :, None]
        + np.log(ggp.psi).T[:, None, :]
    )
    if not np.all(np.isfinite(log_rates)):
        raise RuntimeError("community strength saw non-finite rates; positivity invariant broken")
    shifted = np.exp(log_rates - log_rates.max(axis=0))
    return shifted / shifted.sum(axis=0)


def lagged_states(traj) -> np.ndarray:
    """Columns [x_0, x_1, ..., x_{T-1}], the regressors for each transition."""
    return np.hstack([traj.x0[:, None], traj.X[:, :-1]])


def decompose(traj, trans, obs, A: np.ndarray):
    """Community sub-sequences from the relative-strength weighting.

    x_hat[k][:, t] = [(W o Z) o A_k] x_{t-1} and y_hat[k] = D x_hat[k]; the
    sum over k reconstructs the conditional mean (W o Z) x_{t-1} exactly.
    """
    X_lag = lagged_states(traj)
    base = trans.W * trans.Z
    if A.shape[1:] != base.shape:
        raise ValueError(f"strength tensor shape {A.shape} does not match transition {base.shape}")
    x_hat = np.einsum("kij,jt->kit", base[None, :, :] * A, X_lag)
    y_hat = np.einsum("vs,kst->kvt", obs.D, x_hat)
    return x_hat, y_hat


def decompose_masked(traj, trans, Z_split: np.ndarray) -> np.ndarray:
    """Alternative sub-sequences gated by per-community masks Z_split (K, S, S).

    The superposition of these need not reconstruct the conditional mean when
    the masks overlap; useful for highlighting transitions between dynamics.
    """
    X_lag = lagged_states(traj)
    if Z_split.shape[1:] != trans.W.shape:
        raise ValueError("mask tensor shape does not match transition matrix")
    return np.einsum("kij,jt->kit", trans.W[None, :, :] * Z_split, X_lag)


UNASSIGNED = -1


@dataclass
class Reordering:
    row_perm: np.ndarray  # original row indices in display order
    col_perm: np.ndarray
    pi_row: np.ndarray  # primary community per row; -1 for zero-count rows
    pi_col: np.ndarray
    community_order: np.ndarray  # communities by decreasing ||M_k||_1


def reorder(m_split: np.ndarray) -> Reordering:
    """Block-reorder rows and columns by their primary communities.

    Communities are ranked by total count mass ||M_k||_1; each row maps to
    argmax_k of its community counts (ties to the lowest index) and rows
    inside a block sort by decreasing count in the block's community.
    Zero-count rows/columns go to a trailing unassigned block in index order.
    """
    S = m_split.shape[0]
    mass = m_split.sum(axis=(0, 1))
    community_order = np.array(sorted(range(m_split.shape[2]), key=lambda k: (-mass[k], k)))

    def one_axis(counts):
        # counts: (S, K) per-node counts toward each community
        totals = counts.sum(axis=1)
        pi = np.where(totals > 0, counts.argmax(axis=1), UNASSIGNED)
        perm = []
        for k in community_order:
            members = np.flatnonzero(pi == k)
            members = members[np.lexsort((members, -counts[members, k]))]
            perm.extend(members.tolist())
        perm.extend(np.flatnonzero(pi == UNASSIGNED).tolist())
        return np.array(perm, dtype=int), pi

    row_perm, pi_row = one_axis(m_split.sum(axis=1))
    col_perm, pi_col = one_axis(m_split.sum(axis=0))
    return Reordering(row_perm=row_perm, col_perm=col_perm, pi_row=pi_row,
                      pi_col=pi_col, community_order=community_order)


def export_community_grids(sample, out_dir, top=None):
    """Write plot-ready numeric grids for one posterior sample.

    Emits the reordered adjacency, its edge-activation probabilities, the
    affiliation matrices, the community-weight diagonal, and the top
    relative-strength grids, all as headerless CSV.
    """
    os.makedirs(out_dir, exist_ok=True)
    ggp, trans = sample.ggp, sample.trans
    K = ggp.r.shape[0]
    order = reorder(trans.m_split)
    rows, cols = order.row_perm, order.col_perm
    korder = order.community_order
    if top is None:
        top = K
    top = min(top, K)

    rates = poisson_rates(ggp)
    edge_prob = 1.0 - np.exp(-rates.sum(axis=2))
    A = community_strength(ggp)

    def write(name, grid):
        np.savetxt(os.path.join(out_dir, name), np.atleast_2d(grid), delimiter=",", fmt="%.17g")

    write("Z.csv", trans.Z[np.ix_(rows, cols)])
    write("edge_probability.csv", edge_prob[np.ix_(rows, cols)])
    write("theta.csv", ggp.theta[np.ix_(rows, korder)])
    write("r_diag.csv", np.diag(ggp.r[korder]))
    write("psi_t.csv", ggp.psi.T[np.ix_(korder, cols)])
    for rank in range(top):
        k = korder[rank]
        write(f"A_{rank + 1}.csv", A[k][np.ix_(rows, cols)])
    return order
