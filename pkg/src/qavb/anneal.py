"""Annealed mean-field iteration for the Gaussian mixture.

One sweep updates the parameter posterior from the current responsibilities,
then replaces every site density with

    rho_i = exp(b(1-s) diag(h_i) - b s H) / Tr[...]

where ``h_i`` is the expected log joint of point ``i`` and ``H`` the cyclic
hopping matrix.  Because both energy terms are sums of single-site terms the
update over all hidden states factorizes into N independent K x K problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Literal

import numpy as np

from . import gmm
from .gmm import Dataset, GmmPosterior, GmmPrior
from .smallmat import shannon_entropy, softmax, stable_exp_density, von_neumann_entropy

Algorithm = Literal["qavb", "savb", "vb"]
ALGORITHMS = ("qavb", "savb", "vb")

E_STEP_CHUNK = 2048


class UnsupportedDimensionError(ValueError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleConfig:
    algorithm: Algorithm = "qavb"
    beta0: float = 30.0
    s0: float = 1.0
    tau_qa1: int = 450
    tau_qa2: int = 500
    tau_sa: int = 500
    max_iters: int = 3000
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ScheduleError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "vb":
            object.__setattr__(self, "beta0", 1.0)
            object.__setattr__(self, "s0", 0.0)
        elif self.algorithm == "savb":
            object.__setattr__(self, "s0", 0.0)
        if self.beta0 <= 0:
            raise ScheduleError("beta0 must be positive")
        if not 0.0 <= self.s0 <= 1.0:
            raise ScheduleError("s0 must lie in [0, 1]")
        if self.algorithm == "qavb" and not 0 < self.tau_qa1 < self.tau_qa2:
            raise ScheduleError("need 0 < tau_qa1 < tau_qa2")
        if self.algorithm == "savb" and self.tau_sa <= 0:
            raise ScheduleError("tau_sa must be positive")
        if self.max_iters < 1:
            raise ScheduleError("max_iters must be >= 1")

    @classmethod
    def preset(cls, algorithm: Algorithm, **overrides) -> "ScheduleConfig":
        """Default schedule for each algorithm, with optional overrides."""
        base = {
            "qavb": dict(beta0=30.0, s0=1.0, tau_qa1=450, tau_qa2=500),
            "savb": dict(beta0=0.9, tau_sa=500),
            "vb": {},
        }[algorithm]
        return cls(algorithm=algorithm, **{**base, **overrides})

    @property
    def end(self) -> int:
        """First iteration from which the state is (1, 0) for good."""
        if self.algorithm == "qavb":
            if self.beta0 != 1.0:
                return self.tau_qa2
            return self.tau_qa1 if self.s0 > 0.0 else 0
        if self.algorithm == "savb" and self.beta0 != 1.0:
            return self.tau_sa
        return 0

    @property
    def needs_driver(self) -> bool:
        return self.algorithm == "qavb" and self.s0 > 0.0


@dataclass(frozen=True)
class AnnealState:
    t: int
    beta: float
    s: float

    @property
    def data_weight(self) -> float:
        return self.beta * (1.0 - self.s)

    @property
    def classical(self) -> bool:
        return self.s == 0.0


def hopping_matrix(k: int) -> np.ndarray:
    """Cyclic nearest-neighbour hopping: ones on |l - m| = 1 (mod k)."""
    if k < 3:
        raise UnsupportedDimensionError(
            f"cyclic hopping needs k >= 3 (k = 2 double-counts the only pair), got {k}"
        )
    h = np.zeros((k, k))
    idx = np.arange(k)
    h[idx, (idx + 1) % k] = 1.0
    h[(idx + 1) % k, idx] = 1.0
    return h


def schedule(t: int, cfg: ScheduleConfig) -> AnnealState:
    if t < 0:
        raise ScheduleError("iteration must be >= 0")
    if cfg.algorithm == "vb":
        return AnnealState(t, 1.0, 0.0)
    if cfg.algorithm == "savb":
        beta = 1.0 + (cfg.beta0 - 1.0) * max(1.0 - t / cfg.tau_sa, 0.0)
        return AnnealState(t, beta, 0.0)
    s = cfg.s0 * max(1.0 - t / cfg.tau_qa1, 0.0)
    if t <= cfg.tau_qa1:
        beta = cfg.beta0
    elif t < cfg.tau_qa2:
        beta = 1.0 + (cfg.beta0 - 1.0) * (cfg.tau_qa2 - t) / (cfg.tau_qa2 - cfg.tau_qa1)
    else:
        beta = 1.0
    return AnnealState(t, beta, s)


def effective_hamiltonian(h, state: AnnealState, hqu) -> np.ndarray:
    """Exponent ``b(1-s) diag(h) - b s H`` for one site or a stack of sites."""
    h = np.asarray(h, dtype=np.float64)
    w = state.data_weight
    k = h.shape[-1]
    a = np.zeros(h.shape + (k,))
    if w != 0.0:
        idx = np.arange(k)
        a[..., idx, idx] = w * h
    if state.s != 0.0:
        a -= (state.beta * state.s) * np.asarray(hqu)
    return a


def e_step(post: GmmPosterior, data: Dataset, state: AnnealState, hqu=None):
    """Update all site densities.

    Returns ``(densities, r)``.  In a classical state (s = 0) the densities
    are diagonal and ``densities`` is returned as ``None``; ``r`` then holds
    the full information.
    """
    if state.classical:
        h = gmm.expected_log_resp(post, data.points)
        return None, softmax(state.beta * h, axis=1)

    if hqu is None or np.shape(hqu) != (post.k, post.k):
        raise UnsupportedDimensionError("driver matrix missing or of wrong size")
    n, k = data.n, post.k
    rho = np.empty((n, k, k))
    if state.data_weight == 0.0:
        # no data dependence: one density shared by every site
        rho[:] = stable_exp_density(effective_hamiltonian(np.zeros(k), state, hqu))
    else:
        for lo in range(0, n, E_STEP_CHUNK):
            hi = min(lo + E_STEP_CHUNK, n)
            h = gmm.expected_log_resp(post, data.points[lo:hi])
            rho[lo:hi] = _site_densities(h, state, hqu)
    r = np.diagonal(rho, axis1=1, axis2=2).copy()
    return rho, r


def _site_densities(h, state, hqu):
    if np.any(np.isnan(h)) or np.any(h == np.inf):
        raise FloatingPointError("invalid expected log responsibilities")
    dead = np.isneginf(h).any(axis=0)
    if not dead.any():
        return stable_exp_density(effective_hamiltonian(h, state, hqu))
    # components at -inf energy (improper empty posteriors) are excluded
    # states: the density lives on the remaining block
    alive = np.flatnonzero(~dead)
    if alive.size == 0 or np.isneginf(h[:, alive]).any():
        raise FloatingPointError("expected log responsibilities are -inf for a point")
    sub = effective_hamiltonian(h[:, alive], state, np.asarray(hqu)[np.ix_(alive, alive)])
    rho = np.zeros(h.shape + (h.shape[-1],))
    rho[:, alive[:, None], alive[None, :]] = stable_exp_density(sub)
    return rho


def _diag(densities, r):
    if densities is None:
        return np.asarray(r)
    return np.diagonal(densities, axis1=-2, axis2=-1)


def hidden_entropy(densities, r=None) -> float:
    if densities is None:
        return float(np.sum(shannon_entropy(r)))
    return float(np.sum(von_neumann_entropy(densities)))


def mean_field_objective(
    post: GmmPosterior,
    densities,
    data: Dataset,
    prior: GmmPrior,
    state: AnnealState,
    hqu=None,
    r=None,
) -> float:
    """Mean-field free energy at (beta, s), without the constant ln Z.

    ``KL(q_theta || prior) - b(1-s) sum r h + b s sum Tr[rho H] - sum S(rho)``.
    At (1, 0) this equals minus the ELBO.
    """
    r = _diag(densities, r)
    if r.shape != (data.n, prior.k):
        raise ValueError("densities / data dimension mismatch")
    g = gmm.kl_posterior_prior(post, prior)
    w = state.data_weight
    if w != 0.0 and data.n:
        g -= w * gmm.weighted_energy(r, gmm.expected_log_resp(post, data.points))
    if state.s != 0.0 and densities is not None:
        g += state.beta * state.s * float(np.einsum("nij,ji->", densities, hqu))
    return g - hidden_entropy(densities, r)


def site_free_energy(rho, a) -> float:
    """``-Tr[rho A] - S(rho)``; minimized over densities by exp(A)/Tr exp(A)."""
    return float(-np.einsum("ij,ji->", rho, a) - von_neumann_entropy(rho))


def estep_optimality_check(
    h, state: AnnealState, hqu, n_samples: int, seed: int = 0, diagonal: bool = False
) -> float:
    """Largest amount by which the closed-form site density loses to a random one.

    Non-positive (up to rounding) when the closed form is the global
    minimizer of the single-site free energy.
    """
    from .oracle import random_density

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a = effective_hamiltonian(h, state, hqu)
    best = site_free_energy(stable_exp_density(a), a)
    k = a.shape[0]
    rng = np.random.default_rng(seed)
    gap = -np.inf
    for _ in range(n_samples):
        if diagonal:
            rho = np.diag(rng.dirichlet(np.ones(k)))
        else:
            rho = random_density(k, int(rng.integers(2**63)))
        gap = max(gap, best - site_free_energy(rho, a))
    return float(gap)


@dataclass
class TrialResult:
    seed: int
    algorithm: str
    final_elbo: float
    n_clusters: int
    iterations_run: int
    converged: bool
    final_beta: float
    final_s: float
    objective_trace: list = field(default_factory=list)
    elbo_trace: list = field(default_factory=list)
    posterior: dict = field(default_factory=dict)
    cluster_threshold: float = 1.0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def initial_responsibilities(n: int, k: int, seed: int) -> np.ndarray:
    """Symmetric Dirichlet(1, ..., 1) draw per point."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(k), size=n)


def run_trial(
    prior: GmmPrior,
    data: Dataset,
    cfg: ScheduleConfig,
    seed: int,
    cluster_threshold: float = 1.0,
    r0=None,
    keep_responsibilities: bool = False,
):
    """Run one annealed trial to convergence or ``cfg.max_iters``.

    With ``keep_responsibilities`` the final responsibility matrix is
    returned alongside the result as ``(result, r)``.
    """
    k = prior.k
    hqu = hopping_matrix(k) if cfg.needs_driver else None
    r = initial_responsibilities(data.n, k, seed) if r0 is None else np.array(r0, float)
    objective_trace, elbo_trace = [], []
    converged = False
    state = schedule(0, cfg)
    t = 0
    for t in range(cfg.max_iters):
        state = schedule(t, cfg)
        post = gmm.m_step(prior, data, r, state.data_weight)
        densities, r = e_step(post, data, state, hqu)
        objective_trace.append(mean_field_objective(post, densities, data, prior, state, hqu, r))
        elbo_trace.append(gmm.elbo(prior, post, data, r, densities))
        if t >= cfg.end + 1:
            prev, cur = elbo_trace[-2], elbo_trace[-1]
            if abs(cur - prev) < cfg.convergence_tol * max(abs(cur), 1e-300):
                converged = True
                break
    result = TrialResult(
        seed=seed,
        algorithm=cfg.algorithm,
        final_elbo=elbo_trace[-1],
        n_clusters=gmm.count_clusters(r, cluster_threshold),
        iterations_run=t + 1,
        converged=converged,
        final_beta=state.beta,
        final_s=state.s,
        objective_trace=objective_trace,
        elbo_trace=elbo_trace,
        posterior=post.to_dict(),
        cluster_threshold=cluster_threshold,
    )
    if keep_responsibilities:
        return result, r
    return result
