"""Multi-horizon forecasting, one-step-ahead filtering, and error metrics.

Forecasts use the noise-free mean recursion per posterior sample; the
ensemble spread across samples supplies the uncertainty band. The count
model's point forecast is the negative binomial mean, dispersion times
the exponentiated linear predictor.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ModeError
from .samplers import chol_precision
from .state import GAUSSIAN, PosteriorSample

from scipy.linalg import solve_triangular


def rollout_forecast(sample: PosteriorSample, horizon: int):
    """Mean rollout from the last training state.

    Returns (y_hat, x_hat) with shapes (V, horizon) and (S, horizon).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    A = sample.trans.W * sample.trans.Z
    x = sample.traj.X[:, -1]
    S = x.shape[0]
    x_hat = np.empty((S, horizon))
    for h in range(horizon):
        x = A @ x
        x_hat[:, h] = x
    lin = sample.obs.D @ x_hat
    if sample.obs.kind == GAUSSIAN:
        y_hat = lin
    else:
        y_hat = sample.obs.nb_dispersion * np.exp(lin)
    return y_hat, x_hat


@dataclass
class EnsembleForecast:
    mean: np.ndarray  # (V, H)
    lo: np.ndarray  # (V, H) empirical 2.5% quantile
    hi: np.ndarray  # (V, H) empirical 97.5% quantile
    per_sample: np.ndarray  # (n, V, H)


def ensemble_forecast(samples, horizon: int) -> EnsembleForecast:
    """Per-sample rollouts pooled into a point forecast and a band."""
    if not samples:
        raise ValueError("ensemble_forecast needs at least one posterior sample")
    per = np.stack([rollout_forecast(s, horizon)[0] for s in samples])
    return EnsembleForecast(
        mean=per.mean(axis=0),
        lo=np.quantile(per, 0.025, axis=0, method="lower"),
        hi=np.quantile(per, 0.975, axis=0, method="higher"),
        per_sample=per,
    )


def filter_step(sample: PosteriorSample, x_prev, y_obs):
    """Point filter: posterior mean of x_t given y_t and the propagated state.

    Prior x_t ~ N((W o Z) x_prev, diag(lam)^{-1}); the filtered mean solves
    (Lam + D' Phi D) x = Lam (W o Z) x_prev + D' Phi y.
    """
    if sample.obs.kind != GAUSSIAN:
        raise ModeError("filter_step requires the Gaussian observation model")
    A = sample.trans.W * sample.trans.Z
    lam = sample.trans.lam
    D, Phi = sample.obs.D, sample.obs.gaussian_precision
    P = np.diag(lam) + D.T @ Phi @ D
    b = lam * (A @ np.asarray(x_prev, dtype=float)) + D.T @ (Phi @ np.asarray(y_obs, dtype=float))
    L = chol_precision(P)
    w = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L, w, trans="T", lower=True, check_finite=False)


def one_step_at_a_time(samples, y_future: np.ndarray) -> np.ndarray:
    """Alternate predicting the next step and filtering on its revealed truth.

    y_future is (V, H); the h-th prediction uses observations up to h-1.
    Returns the (V, H) prediction averaged over posterior samples.
    """
    y_future = np.asarray(y_future, dtype=float)
    if not samples:
        raise ValueError("one_step_at_a_time needs at least one posterior sample")
    if samples[0].obs.kind != GAUSSIAN:
        raise ModeError("one_step_at_a_time requires the Gaussian observation model")
    V, H = y_future.shape
    preds = np.zeros((V, H))
    for sample in samples:
        A = sample.trans.W * sample.trans.Z
        D = sample.obs.D
        x = sample.traj.X[:, -1]
        for h in range(H):
            preds[:, h] += D @ (A @ x)
            x = filter_step(sample, x, y_future[:, h])
    return preds / len(samples)


def _columns(y):
    y = np.asarray(y, dtype=float)
    return y.reshape(-1, 1) if y.ndim == 1 else y


def mae(y, y_hat) -> np.ndarray:
    """Mean absolute error over dimensions, one value per horizon column."""
    y, y_hat = _columns(y), _columns(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return np.abs(y - y_hat).mean(axis=0)


def mare(y, y_hat) -> np.ndarray:
    """Mean absolute relative error for counts: |y - y_hat| / (V (y + 1))."""
    y, y_hat = _columns(y), _columns(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return (np.abs(y - y_hat) / (y + 1.0)).mean(axis=0)


def write_prediction_csv(path, forecast: EnsembleForecast, labels=None):
    V, H = forecast.mean.shape
    if labels is None:
        labels = [f"y{v}" for v in range(V)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "dimension", "point", "lo", "hi"])
        for h in range(H):
            for v in range(V):
                writer.writerow([h + 1, labels[v], repr(forecast.mean[v, h]),
                                 repr(forecast.lo[v, h]), repr(forecast.hi[v, h])])


def write_metrics_csv(path, metric_name, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "metric", "value"])
        for h, v in enumerate(np.asarray(values).ravel(), start=1):
            writer.writerow([h, metric_name, repr(float(v))])
