"""Random-variate generators underlying the Gibbs sampler.

All gamma draws use the shape-scale parameterization (mean = shape * scale);
rate parameters are converted to scales at call sites. Every sampler accepts
an RngStream and is deterministic given (seed, stream_id).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ParameterError, SingularMatrixError

_TWO_PI_SQ = 2.0 * np.pi**2
_PG_TRUNCATION = 5


@dataclass
class RngStream:
    """Reproducible random stream keyed by (seed, stream_id).

    Identical (seed, stream_id) pairs replay the identical draw sequence;
    distinct stream_ids give statistically independent streams. A single
    stream must not be shared across concurrent callers.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(default=None, repr=False, compare=False)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def sample_gamma(shape, scale, rng: RngStream):
    """Gamma draw(s), shape-scale convention. Broadcasts over arrays."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ParameterError("sample_gamma requires shape > 0 and scale > 0")
    out = rng.gen.gamma(shape, scale)
    return float(out) if out.ndim == 0 else out


def sample_mvn(mean, precision, rng: RngStream):
    """Multivariate normal draw given the precision (inverse covariance).

    One triangular factorization of the precision; no explicit inverse.
    """
    mean = np.asarray(mean, dtype=float)
    L = chol_precision(precision)
    z = rng.gen.standard_normal(mean.shape[0])
    return mean + solve_triangular(L, z, trans="T", lower=True)


def sample_mvn_canonical(shift, precision, rng: RngStream):
    """Draw from N(P^{-1} h, P^{-1}) given the natural parameters (h, P)."""
    shift = np.asarray(shift, dtype=float)
    L = chol_precision(precision)
    w = solve_triangular(L, shift, lower=True)
    z = rng.gen.standard_normal(shift.shape[0])
    return solve_triangular(L, w + z, trans="T", lower=True)


def chol_precision(precision):
    precision = np.asarray(precision, dtype=float)
    try:
        return np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(precision)) if np.all(np.isfinite(precision)) else np.inf
        raise SingularMatrixError(
            f"precision matrix failed Cholesky factorization (cond={cond:.3e})",
            condition=cond,
        ) from exc


def sample_wishart(scale, dof, rng: RngStream):
    """Wishart draw via the Bartlett decomposition. E[X] = dof * scale."""
    scale = np.asarray(scale, dtype=float)
    n = scale.shape[0]
    if dof < n:
        raise ParameterError(f"Wishart dof ({dof}) must be >= dimension ({n})")
    L = chol_precision(scale)  # same SPD requirement as a precision
    A = np.zeros((n, n))
    A[np.diag_indices(n)] = np.sqrt(rng.gen.chisquare(dof - np.arange(n)))
    if n > 1:
        A[np.tril_indices(n, -1)] = rng.gen.standard_normal(n * (n - 1) // 2)
    LA = L @ A
    return LA @ LA.T


def sample_inverse_wishart(scale, dof, rng: RngStream):
    """Inverse-Wishart draw: the inverse of a Wishart draw with inverted scale.

    E[X] = scale / (dof - n - 1) for dof > n + 1.
    """
    scale = np.asarray(scale, dtype=float)
    scale_inv = _spd_inverse(scale)
    W = sample_wishart(scale_inv, dof, rng)
    return _spd_inverse(W)


def _spd_inverse(mat):
    L = chol_precision(mat)
    inv = solve_triangular(L, np.eye(mat.shape[0]), lower=True)
    out = inv.T @ inv
    return 0.5 * (out + out.T)


def sample_crt(n, r, rng: RngStream):
    """Chinese restaurant table count: sum of Bernoulli(r / (r + i - 1)), i = 1..n.

    Broadcasts over integer arrays n and positive arrays r; 0 <= result <= n.
    """
    n_arr = np.asarray(n)
    r_arr = np.asarray(r, dtype=float)
    if np.any(n_arr < 0):
        raise ParameterError("sample_crt requires n >= 0")
    if np.any(r_arr <= 0):
        raise ParameterError("sample_crt requires r > 0")
    n_b, r_b = np.broadcast_arrays(n_arr, r_arr)
    out = np.zeros(n_b.shape, dtype=np.int64)
    n_max = int(n_b.max()) if n_b.size else 0
    for i in range(1, n_max + 1):
        active = n_b >= i
        p = r_b / (r_b + (i - 1.0))
        out += (rng.gen.random(n_b.shape) < p) & active
    if np.isscalar(n) and np.isscalar(r):
        return int(out)
    return out


def _pg_total_moments(b, c):
    """Exact mean and variance of PG(b, c); series branch avoids 0/0 at c = 0."""
    c2 = c * c
    small = np.abs(c) < 0.05
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.tanh(c / 2.0) / (2.0 * c)
        x = c / 2.0
        t2 = (np.tanh(x) - x / np.cosh(x) ** 2) / (2.0 * c**3)
    t1 = np.where(small, 0.25 - c2 / 48.0 + c2 * c2 / 480.0, t1)
    t2 = np.where(small, 1.0 / 24.0 - c2 / 120.0 + (17.0 / 13440.0) * c2 * c2, t2)
    return b * t1, b * t2


def sample_polya_gamma(b, c, rng: RngStream):
    """Approximate PG(b, c) draw matching the exact first two moments.

    Truncated representation: the first five gamma-weighted series terms are
    sampled exactly and the infinite remainder is replaced by a single gamma
    variate matched to the remainder's mean and variance, so the total mean
    b/(2c) tanh(c/2) and the total variance are reproduced exactly.
    """
    b_arr = np.asarray(b, dtype=float)
    c_arr = np.asarray(c, dtype=float)
    if np.any(b_arr <= 0):
        raise ParameterError("sample_polya_gamma requires b > 0")
    b_b, c_b = np.broadcast_arrays(b_arr, c_arr)
    shape = b_b.shape
    b_flat = np.atleast_1d(b_b).ravel()
    c_flat = np.atleast_1d(c_b).ravel()

    k = np.arange(1, _PG_TRUNCATION + 1, dtype=float)[:, None]
    denom = (k - 0.5) ** 2 + (c_flat / (2.0 * np.pi)) ** 2  # (5, N) term denominators
    g = rng.gen.gamma(np.broadcast_to(b_flat, denom.shape), 1.0)
    partial = (g / denom).sum(axis=0) / _TWO_PI_SQ

    total_mean, total_var = _pg_total_moments(b_flat, c_flat)
    partial_mean = b_flat * (1.0 / denom).sum(axis=0) / _TWO_PI_SQ
    partial_var = b_flat * (1.0 / denom**2).sum(axis=0) / (4.0 * np.pi**4)
    tail_mean = total_mean - partial_mean
    tail_var = total_var - partial_var
    tail = rng.gen.gamma(tail_mean**2 / tail_var, tail_var / tail_mean)

    # support is (0, inf); tiny b underflows the gamma draws to exact zero
    out = np.maximum(partial + tail, 1e-300).reshape(shape)
    if np.isscalar(b) and np.isscalar(c):
        return float(out)
    return out


def sample_truncated_poisson(lam, rng: RngStream, _inv_cdf_terms: int = 30):
    """Zero-truncated Poisson draw(s): support {1, 2, ...}.

    lam >= 1 rejects zero draws from Poisson(lam); smaller rates use
    inverse-cdf on the leading pmf terms since plain rejection would accept
    with probability ~lam.
    """
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise ParameterError("sample_truncated_poisson requires lambda > 0")
    flat = np.atleast_1d(lam_arr).ravel()
    out = np.ones(flat.shape, dtype=np.int64)

    big = flat >= 1.0
    if big.any():
        vals = rng.gen.poisson(flat[big])
        pending = vals == 0
        while pending.any():
            vals[pending] = rng.gen.poisson(flat[big][pending])
            pending = vals == 0
        out[big] = vals

    small = ~big
    if small.any():
        lam_s = flat[small][:, None]
        ks = np.arange(1, _inv_cdf_terms + 1, dtype=float)
        # unnormalized pmf lam^k / k! built by cumulative products
        terms = np.cumprod(lam_s / ks, axis=1)
        cdf = np.cumsum(terms, axis=1)
        u = rng.gen.random(lam_s.shape[0]) * cdf[:, -1]
        out[small] = 1 + (u[:, None] > cdf).sum(axis=1)

    if np.isscalar(lam):
        return int(out[0])
    return out.reshape(lam_arr.shape)


def sample_multinomial(n, weights, rng: RngStream):
    """Multinomial counts over len(weights) categories, proportional to weights."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ParameterError("sample_multinomial requires non-negative weights")
    total = weights.sum()
    if total <= 0:
        raise ParameterError("sample_multinomial requires at least one positive weight")
    if n < 0:
        raise ParameterError("sample_multinomial requires n >= 0")
    return rng.gen.multinomial(int(n), weights / total)
