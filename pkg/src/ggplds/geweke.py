"""Joint-distribution correctness test for the sampler.

Two ways of simulating (latents, data): fresh prior draws on one side,
and on the other a chain that alternates a full Gibbs sweep with
re-drawing the data from the observation layer. If every conditional is
correct both sides share the same stationary distribution, so the means
of any statistic must agree up to Monte Carlo error. The successive side
is autocorrelated, so its standard error comes from batch means.
"""

from dataclasses import dataclass

import numpy as np

from .gibbs import gibbs_sweep
from .samplers import RngStream
from .state import NEGATIVE_BINOMIAL, generate_observations, init_random

STATISTICS = ("z_mean", "m_total", "lam_mean", "r_mean", "x2_mean")


def collect_statistics(state) -> dict:
    stats = {
        "z_mean": float(state.trans.Z.mean()),
        "m_total": float(state.trans.M.sum()),
        "lam_mean": float(state.trans.lam.mean()),
        "r_mean": float(state.ggp.r.mean()),
        "x2_mean": float((state.traj.X**2).mean()),
    }
    if state.obs.kind == NEGATIVE_BINOMIAL:
        stats["eta"] = float(state.obs.nb_dispersion)
    return stats


@dataclass
class GewekeResult:
    z_scores: dict
    marginal_means: dict
    successive_means: dict
    rounds: int

    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z_scores.values())


def _batch_se(series: np.ndarray, batches: int) -> float:
    usable = (len(series) // batches) * batches
    means = series[:usable].reshape(batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def geweke_test(hyper, data_shape, rounds, rng: RngStream = None, skip=(),
                batches=100) -> GewekeResult:
    """Compare marginal-conditional and successive-conditional simulation.

    Returns per-statistic z-scores of the mean differences. `skip` disables
    named sweep steps, which is how a deliberately broken sweep is shown to
    fail the test.
    """
    if rng is None:
        rng = RngStream(hyper.seed)

    marginal = {name: np.empty(rounds) for name in STATISTICS}
    if hyper.observation_kind == NEGATIVE_BINOMIAL:
        marginal["eta"] = np.empty(rounds)
    for i in range(rounds):
        stats = collect_statistics(init_random(hyper, data_shape, rng))
        for name, value in stats.items():
            marginal[name][i] = value

    successive = {name: np.empty(rounds) for name in marginal}
    state = init_random(hyper, data_shape, rng)
    Y = generate_observations(state, rng)
    for i in range(rounds):
        gibbs_sweep(state, Y, rng, skip=skip)
        Y = generate_observations(state, rng)
        stats = collect_statistics(state)
        for name, value in stats.items():
            successive[name][i] = value

    z_scores, mc_means, sc_means = {}, {}, {}
    for name in marginal:
        mc = marginal[name]
        sc = successive[name]
        se_mc = mc.std(ddof=1) / np.sqrt(rounds)
        se_sc = _batch_se(sc, batches)
        z_scores[name] = float((mc.mean() - sc.mean()) / np.hypot(se_mc, se_sc))
        mc_means[name] = float(mc.mean())
        sc_means[name] = float(sc.mean())

    return GewekeResult(z_scores=z_scores, marginal_means=mc_means,
                        successive_means=sc_means, rounds=rounds)


def geweke_toy_hyper(kind="gaussian", seed=0):
    """Toy-shape hyperparameters for the correctness harness.

    Shape parameters are raised well above the defaults so every monitored
    statistic has finite variance (the z-test needs second moments; with
    unit shapes the inverse-scale and weight-precision tails are too heavy).
    """
    from .state import Hyperparameters

    return Hyperparameters(
        V=2, K=2, S=3,
        gamma0=4.0, alpha0=20.0, beta0=2.0,
        c=1.0, c_rho=1.0, c_tau=1.0,
        a=20.0, b=20.0,
        iters=10, burnin=5, thin=1,
        seed=seed, observation_kind=kind,
    )
