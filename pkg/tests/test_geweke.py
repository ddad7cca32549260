"""Joint-distribution smoke checks; the full-size run lives in the
acceptance suite. The mutation case shows the harness has teeth: removing
one update must blow the z-scores up."""

import numpy as np

from ggplds.geweke import collect_statistics, geweke_test, geweke_toy_hyper
from ggplds.samplers import RngStream
from ggplds.state import init_random


def test_self_consistency_two_marginal_runs():
    # two independent prior-sampling runs estimate the same means
    hyper = geweke_toy_hyper("gaussian", seed=3)
    shape = (2, 8)
    n = 6000

    def stats_run(stream):
        rng = RngStream(55, stream)
        rows = [collect_statistics(init_random(hyper, shape, rng)) for _ in range(n)]
        return {k: np.array([r[k] for r in rows]) for k in rows[0]}

    a, b = stats_run(0), stats_run(1)
    for name in a:
        se = np.hypot(a[name].std(ddof=1), b[name].std(ddof=1)) / np.sqrt(n)
        z = (a[name].mean() - b[name].mean()) / se
        assert abs(z) < 4.0, f"{name}: z = {z:.2f}"


def test_correct_sweep_smoke():
    hyper = geweke_toy_hyper("gaussian", seed=4)
    res = geweke_test(hyper, (2, 8), rounds=8000, rng=RngStream(56), batches=80)
    assert res.max_abs_z() < 4.5, res.z_scores


def test_mutation_detected():
    # freezing the mask update leaves Z at its initial draw; the harness
    # must flag the broken sweep loudly
    hyper = geweke_toy_hyper("gaussian", seed=5)
    res = geweke_test(hyper, (2, 8), rounds=8000, rng=RngStream(57),
                      skip=("mask",), batches=80)
    assert res.max_abs_z() > 6.0, res.z_scores
