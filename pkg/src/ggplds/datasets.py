"""Synthetic benchmark generators and CSV ingestion.

Both chaotic-system generators integrate with fixed-step fourth-order
Runge-Kutta and emit every step. CSV files carry a mandatory header
`t,<label>...`; rows are time steps, columns are data dimensions.
"""

import csv

import numpy as np

from .errors import DivergenceError, ParseError
from .samplers import RngStream
from .state import TimeSeriesData


def _rk4_path(deriv, x0, T, dt, discard):
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((x.shape[0], T))
    for step in range(discard + T):
        if step >= discard:
            out[:, step - discard] = x
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * dt * k1)
        k3 = deriv(x + 0.5 * dt * k2)
        k4 = deriv(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"trajectory diverged at step {step}")
    return out


def lorenz_generate(alpha=1.0, beta=2.0, gamma=1.0, x_init=None, T=578,
                    dt=0.05, rng: RngStream = None, discard=0):
    """Three-variable convection system, shape (3, T); column 0 is the state
    after `discard` warm-up steps (x_init itself when discard = 0)."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if x_init is None:
        if rng is None:
            raise ValueError("provide x_init or an rng to draw it")
        x_init = rng.gen.uniform(-8.0, 8.0, size=3)

    def deriv(x):
        return np.array([
            alpha * (x[1] - x[0]),
            x[0] * (beta - x[2]) - x[1],
            x[0] * x[1] - gamma * x[2],
        ])

    return _rk4_path(deriv, x_init, T, dt, discard)


def fhn_generate(current=0.3, a=0.7, b=0.8, c=0.7, v_init=0.0, w_init=0.0,
                 T=800, dt=0.1, rng: RngStream = None, discard=0):
    """Two-variable excitable-membrane system, shape (2, T)."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if dt <= 0:
        raise ValueError("dt must be positive")

    def deriv(x):
        v, w = x
        return np.array([v - v**3 / 3.0 - w + current, c * (v + a - b * w)])

    return _rk4_path(deriv, np.array([v_init, w_init]), T, dt, discard)


def project_observations(latent, obs_dim, noise_precision, rng: RngStream, D_true=None):
    """Map a latent trajectory to observation space with Gaussian noise.

    noise_precision may be a scalar (isotropic; inf means noise-free) or an
    SPD matrix. Returns (Y, D_true) where D_true has standard-normal entries
    unless overridden.
    """
    latent = np.asarray(latent, dtype=float)
    d, T = latent.shape
    if obs_dim < d:
        raise ValueError("obs_dim must be at least the latent dimension")
    if D_true is None:
        D_true = rng.gen.standard_normal((obs_dim, d))
    else:
        D_true = np.asarray(D_true, dtype=float)
    Y = D_true @ latent
    if np.isscalar(noise_precision):
        if not np.isinf(noise_precision):
            Y = Y + rng.gen.standard_normal((obs_dim, T)) / np.sqrt(noise_precision)
    else:
        from scipy.linalg import solve_triangular

        L = np.linalg.cholesky(np.asarray(noise_precision, dtype=float))
        Y = Y + solve_triangular(L, rng.gen.standard_normal((obs_dim, T)),
                                 trans="T", lower=True)
    return Y, D_true


def load_csv(path, kind="real") -> TimeSeriesData:
    """Read a series file; kind="count" additionally validates integer cells."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip() != "t":
            raise ParseError(f"{path}: header must be 't,<label>...', got {header!r}", row=1)
        labels = [h.strip() for h in header[1:]]
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(
                    f"{path}: row {line_no} has {len(row)} cells, expected {width}",
                    row=line_no,
                )
            parsed = []
            for col_no, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric cell {cell!r} at row {line_no}, column {col_no}",
                        row=line_no, column=col_no,
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    time_index = table[:, 0]
    Y = table[:, 1:].T
    if kind == "count":
        bad = np.argwhere((Y < 0) | (Y != np.round(Y)))
        if bad.size:
            v, t = bad[0]
            raise ParseError(
                f"{path}: count data must be non-negative integers; "
                f"offending cell at row {t + 2}, column {v + 2}",
                row=int(t) + 2, column=int(v) + 2,
            )
    return TimeSeriesData(Y=Y, dimension_labels=labels, time_index=time_index, kind=kind)


def save_csv(data: TimeSeriesData, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + list(data.dimension_labels))
        count = data.kind == "count"
        for t in range(data.Y.shape[1]):
            idx = data.time_index[t]
            idx_cell = repr(int(idx)) if float(idx).is_integer() else repr(float(idx))
            cells = [idx_cell]
            for v in range(data.Y.shape[0]):
                val = data.Y[v, t]
                cells.append(repr(int(val)) if count else repr(float(val)))
            writer.writerow(cells)
