"""Typed containers for every latent variable of the hierarchical model.

Shape conventions: K communities, S latent states, V observed dimensions,
T time steps. Matrices are row-major numpy arrays; the latent trajectory X
is S x T with a separate initial state x0.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .samplers import RngStream, sample_mvn, sample_polya_gamma, sample_wishart

GAUSSIAN = "gaussian"
NEGATIVE_BINOMIAL = "negative_binomial"

# positivity floor for gamma-distributed state: keeps strict-positivity
# invariants through float underflow in degenerate iterations
POSITIVE_FLOOR = 1e-300


@dataclass
class Hyperparameters:
    V: int
    K: int = 16
    S: int = 30
    gamma0: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0
    c: float = 1.0
    c_rho: float = 1.0
    c_tau: float = 1.0
    a: float = 1.0
    b: float = 0.1
    wishart_scale: np.ndarray = None  # default: identity V x V
    m0: np.ndarray = None  # default: zeros(S)
    H0: np.ndarray = None  # x0 prior precision; default: identity S x S
    iters: int = 6000
    burnin: int = 3000
    thin: int = 60
    seed: int = 0
    observation_kind: str = GAUSSIAN

    def __post_init__(self):
        if self.wishart_scale is None:
            self.wishart_scale = np.eye(self.V)
        else:
            self.wishart_scale = np.asarray(self.wishart_scale, dtype=float)
        if self.m0 is None:
            self.m0 = np.zeros(self.S)
        else:
            self.m0 = np.asarray(self.m0, dtype=float)
        if self.H0 is None:
            self.H0 = np.eye(self.S)
        else:
            self.H0 = np.asarray(self.H0, dtype=float)
        self.validate()

    def validate(self):
        problems = []
        for name in ("K", "S", "V", "iters", "burnin", "thin"):
            if int(getattr(self, name)) < (0 if name == "burnin" else 1):
                problems.append(f"{name} must be positive")
        for name in ("gamma0", "alpha0", "beta0", "c", "c_rho", "c_tau", "a", "b"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.burnin >= self.iters:
            problems.append("burnin must be < iters")
        if self.thin < 1:
            problems.append("thin must be >= 1")
        if self.observation_kind not in (GAUSSIAN, NEGATIVE_BINOMIAL):
            problems.append(f"unknown observation_kind {self.observation_kind!r}")
        if self.wishart_scale.shape != (self.V, self.V):
            problems.append("wishart_scale must be V x V")
        if self.m0.shape != (self.S,):
            problems.append("m0 must have length S")
        if self.H0.shape != (self.S, self.S):
            problems.append("H0 must be S x S")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def scalar_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, np.ndarray):
                out[f.name] = v
        return out


@dataclass
class GgpState:
    """Community weights and node affiliations of the truncated graph prior."""

    r: np.ndarray  # (K,) community activation strengths
    theta: np.ndarray  # (S, K) incoming-influence affiliations
    psi: np.ndarray  # (S, K) outgoing-influence affiliations
    rho: np.ndarray  # (S,) node weights for theta
    tau: np.ndarray  # (S,) node weights for psi
    e: np.ndarray  # (K,) theta scales
    f: np.ndarray  # (K,) psi scales


@dataclass
class TransitionState:
    """Latent transition weights, spike-and-slab mask, and edge counts."""

    W: np.ndarray  # (S, S) real transition weights
    Z: np.ndarray  # (S, S) binary mask; Z[i, j] = 1 iff M[i, j] >= 1
    M: np.ndarray  # (S, S) latent edge counts
    m_split: np.ndarray  # (S, S, K) per-community count split; sums to M
    varphi: np.ndarray  # (S, S) weight precisions
    lam: np.ndarray  # (S,) state-noise precisions


@dataclass
class ObservationState:
    """Loadings plus the variant-specific observation parameters."""

    D: np.ndarray  # (V, S) factor loadings
    gaussian_precision: np.ndarray = None  # (V, V), Gaussian variant only
    nb_dispersion: float = None  # eta, count variant only
    alpha_eta: float = None
    beta_eta: float = None
    pg_aux: np.ndarray = None  # (V, T) Polya-Gamma auxiliaries, count variant

    @property
    def kind(self):
        return GAUSSIAN if self.gaussian_precision is not None else NEGATIVE_BINOMIAL


@dataclass
class LatentTrajectory:
    X: np.ndarray  # (S, T), column t-1 holds x_t
    x0: np.ndarray  # (S,)


@dataclass
class ModelState:
    """Mutable working state owned by a single chain."""

    hyper: Hyperparameters
    ggp: GgpState
    trans: TransitionState
    obs: ObservationState
    traj: LatentTrajectory

    def snapshot(self, iteration: int) -> "PosteriorSample":
        return PosteriorSample(
            ggp=_copy_component(self.ggp),
            trans=_copy_component(self.trans),
            obs=_copy_component(self.obs),
            traj=_copy_component(self.traj),
            iteration=iteration,
        )


@dataclass(frozen=True)
class PosteriorSample:
    """Immutable snapshot of all latent variables at one retained iteration."""

    ggp: GgpState
    trans: TransitionState
    obs: ObservationState
    traj: LatentTrajectory
    iteration: int


@dataclass
class TimeSeriesData:
    """Observed multivariate series, one row per dimension."""

    Y: np.ndarray  # (V, T)
    dimension_labels: list = None
    time_index: np.ndarray = None
    kind: str = "real"  # "real" or "count"

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim != 2:
            raise ValueError("Y must be V x T")
        V, T = self.Y.shape
        if self.dimension_labels is None:
            self.dimension_labels = [f"y{v}" for v in range(V)]
        if self.time_index is None:
            self.time_index = np.arange(T, dtype=float)
        else:
            self.time_index = np.asarray(self.time_index, dtype=float)
        if len(self.dimension_labels) != V:
            raise ValueError("dimension_labels length must match V")
        if self.time_index.shape != (T,):
            raise ValueError("time_index length must match T")
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("Y contains non-finite entries (missing data unsupported)")
        if self.kind == "count":
            if np.any(self.Y < 0) or np.any(self.Y != np.round(self.Y)):
                raise ValueError("count data must be non-negative integers")

    @property
    def shape(self):
        return self.Y.shape


def _copy_component(comp):
    kwargs = {}
    for f in fields(comp):
        v = getattr(comp, f.name)
        if isinstance(v, np.ndarray):
            v = v.copy()
            v.setflags(write=False)
        kwargs[f.name] = v
    return type(comp)(**kwargs)


def _floor_positive(arr):
    return np.maximum(arr, POSITIVE_FLOOR)


def init_random(hyper: Hyperparameters, data_shape, rng: RngStream) -> ModelState:
    """Draw every latent variable from its prior.

    data_shape is (V, T); V must agree with the hyperparameters.
    """
    V, T = data_shape
    if V != hyper.V:
        raise ValueError(f"data dimension {V} does not match hyper.V = {hyper.V}")
    K, S = hyper.K, hyper.S
    g = rng.gen

    e = _floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0, size=K))
    f = _floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0, size=K))
    rho = _floor_positive(g.gamma(hyper.gamma0 / S, 1.0 / hyper.c_rho, size=S))
    tau = _floor_positive(g.gamma(hyper.gamma0 / S, 1.0 / hyper.c_tau, size=S))
    theta = _floor_positive(g.gamma(rho[:, None], 1.0 / e[None, :]))
    psi = _floor_positive(g.gamma(tau[:, None], 1.0 / f[None, :]))
    r = _floor_positive(g.gamma(hyper.gamma0 / K, 1.0 / hyper.c, size=K))
    ggp = GgpState(r=r, theta=theta, psi=psi, rho=rho, tau=tau, e=e, f=f)

    rates = np.einsum("k,ik,jk->ijk", r, theta, psi)
    m_split = g.poisson(rates).astype(np.int64)
    M = m_split.sum(axis=2)
    Z = (M >= 1).astype(np.int8)
    varphi = _floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0, size=(S, S)))
    W = g.standard_normal((S, S)) / np.sqrt(varphi)
    lam = _floor_positive(g.gamma(hyper.a, 1.0 / hyper.b, size=S))
    trans = TransitionState(W=W, Z=Z, M=M, m_split=m_split, varphi=varphi, lam=lam)

    D = g.standard_normal((V, S)) * V ** (-0.25)  # N(0, I_V / sqrt(V)) columns

    x0 = sample_mvn(hyper.m0, hyper.H0, rng)
    X = np.empty((S, T))
    A = W * Z
    noise_scale = 1.0 / np.sqrt(lam)
    prev = x0
    for t in range(T):
        prev = A @ prev + noise_scale * g.standard_normal(S)
        X[:, t] = prev
    traj = LatentTrajectory(X=X, x0=x0)

    if hyper.observation_kind == GAUSSIAN:
        phi = sample_wishart(hyper.wishart_scale, V + 2, rng)
        obs = ObservationState(D=D, gaussian_precision=phi)
    else:
        alpha_eta = float(_floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0)))
        beta_eta = float(_floor_positive(g.gamma(hyper.alpha0, 1.0 / hyper.beta0)))
        eta = float(_floor_positive(g.gamma(alpha_eta, 1.0 / beta_eta)))
        omega = sample_polya_gamma(np.full((V, T), eta), 0.0, rng)
        obs = ObservationState(
            D=D, nb_dispersion=eta, alpha_eta=alpha_eta, beta_eta=beta_eta, pg_aux=omega
        )

    return ModelState(hyper=hyper, ggp=ggp, trans=trans, obs=obs, traj=traj)


def generate_observations(state: ModelState, rng: RngStream, clip: float = 30.0) -> np.ndarray:
    """Draw Y | latent state from the observation layer, shape (V, T).

    For the count layer the linear predictor is clipped at +-clip before the
    negative binomial draw; beyond that range the counts would overflow and
    the probability mass involved is negligible in practice.
    """
    obs, traj = state.obs, state.traj
    g = rng.gen
    mean = obs.D @ traj.X
    if obs.kind == GAUSSIAN:
        from scipy.linalg import solve_triangular

        L = np.linalg.cholesky(obs.gaussian_precision)
        noise = solve_triangular(L, g.standard_normal(mean.shape), trans="T",
                                 lower=True, check_finite=False)
        return mean + noise
    xi = np.clip(mean, -clip, clip)
    p_success = 1.0 / (1.0 + np.exp(xi))  # failure-count convention: mean = eta * exp(xi)
    return g.negative_binomial(obs.nb_dispersion, p_success).astype(float)


def validate_sample(sample) -> list:
    """Check every type invariant; returns the (possibly empty) violation list."""
    v = []
    ggp, trans, obs, traj = sample.ggp, sample.trans, sample.obs, sample.traj

    S, K = ggp.theta.shape
    if ggp.r.shape != (K,):
        v.append("ggp.r length does not match theta community count")
    for name in ("r", "theta", "psi", "rho", "tau", "e", "f"):
        arr = getattr(ggp, name)
        if not np.all(arr > 0):
            v.append(f"ggp.{name} must be strictly positive")
    if ggp.psi.shape != (S, K):
        v.append("ggp.psi shape differs from ggp.theta")

    if trans.W.shape != (S, S) or trans.Z.shape != (S, S):
        v.append("transition matrices must be S x S")
    if not np.isin(trans.Z, (0, 1)).all():
        v.append("trans.Z must be binary")
    if np.any((trans.Z == 1) != (trans.M >= 1)):
        v.append("Z/M coupling violated: Z[i][j] = 1 iff M[i][j] >= 1")
    if trans.m_split.shape != (S, S, K):
        v.append("trans.m_split must be S x S x K")
    elif np.any(trans.m_split.sum(axis=2) != trans.M):
        v.append("m_split must sum over communities to M")
    if np.any(trans.m_split < 0):
        v.append("trans.m_split must be non-negative")
    if not np.all(trans.varphi > 0):
        v.append("trans.varphi must be strictly positive")
    if not np.all(trans.lam > 0):
        v.append("trans.lam must be strictly positive")

    has_gauss = obs.gaussian_precision is not None
    has_nb = obs.nb_dispersion is not None
    if has_gauss == has_nb:
        v.append("exactly one of gaussian_precision / nb_dispersion must be set")
    if has_gauss:
        phi = obs.gaussian_precision
        if not np.allclose(phi, phi.T):
            v.append("gaussian_precision must be symmetric")
        else:
            try:
                np.linalg.cholesky(phi)
            except np.linalg.LinAlgError:
                v.append("gaussian_precision must be positive definite")
    if has_nb:
        if obs.nb_dispersion <= 0 or obs.alpha_eta <= 0 or obs.beta_eta <= 0:
            v.append("nb dispersion parameters must be strictly positive")
        if obs.pg_aux is None or not np.all(obs.pg_aux > 0):
            v.append("pg_aux must be present and strictly positive")

    if traj.X.ndim != 2 or traj.X.shape[0] != S:
        v.append("trajectory X must be S x T")
    elif traj.X.shape[1] < 2:
        v.append("trajectory must span T >= 2 steps")
    if traj.x0.shape != (S,):
        v.append("x0 must have length S")
    for name, arr in (("X", traj.X), ("x0", traj.x0), ("W", trans.W)):
        if not np.all(np.isfinite(arr)):
            v.append(f"{name} contains non-finite values")

    return v
