"""Brute-force references for tests and the ``verify`` command.

Nothing in here is called by the inference path.  Kernels deliberately avoid
``numpy.linalg.eigh`` so the checks stay independent of ``smallmat``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import digamma, gammaln


@dataclass
class OracleReport:
    name: str
    max_abs_error: float
    n_cases: int
    tolerance: float
    passed: bool

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return asdict(self)


def taylor_expm(a, terms: int = 30) -> np.ndarray:
    """Matrix exponential by truncated Taylor series with scaling and squaring."""
    if terms < 20:
        raise ValueError("use at least 20 Taylor terms")
    a = np.asarray(a, dtype=np.float64)
    norm = np.abs(a).sum(axis=1).max() if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    x = a / (2.0**squarings)
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for j in range(1, terms + 1):
        term = term @ x / j
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def taylor_exp_density(a, terms: int = 30) -> np.ndarray:
    """exp(A)/Tr exp(A), shifting by the largest Gershgorin bound first."""
    a = np.asarray(a, dtype=np.float64)
    # any scalar shift cancels in the normalization; keep exponents <= 0-ish
    shift = np.max(np.diag(a) + np.abs(a).sum(axis=1) - np.abs(np.diag(a)))
    e = taylor_expm(a - shift * np.eye(a.shape[0]), terms)
    return e / np.trace(e)


def random_density(k: int, seed: int) -> np.ndarray:
    """V diag(p) V^T with Haar-ish orthogonal V and p uniform on the simplex."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    q = q * np.sign(np.diag(r))
    p = rng.dirichlet(np.ones(k))
    rho = (q * p) @ q.T
    rho = 0.5 * (rho + rho.T)
    return rho / np.trace(rho)


def charpoly_roots(m) -> np.ndarray:
    """Eigenvalues of a symmetric matrix from its characteristic polynomial."""
    coeffs = np.poly(np.asarray(m, dtype=np.float64))
    return np.sort(np.roots(coeffs).real)


def student_t_evidence(prior, data) -> float:
    """Exact log marginal likelihood for K = 1, D = 1 (Normal-Gamma).

    The Wishart(W0, nu0) precision prior in one dimension is a Gamma with
    shape nu0/2 and rate 1/(2 W0).
    """
    if prior.k != 1 or prior.d != 1:
        raise ValueError("evidence oracle supports K = 1, D = 1 only")
    if prior.nu0 <= 0:
        raise ValueError("improper prior")
    y = np.asarray(data.points, dtype=float).ravel()
    n = y.size
    if n == 0:
        return 0.0
    a0 = prior.nu0 / 2.0
    b0 = 1.0 / (2.0 * float(prior.w0[0, 0]))
    k0 = prior.gamma0
    m0 = float(prior.m0[0])
    ybar = y.mean()
    ss = float(np.sum((y - ybar) ** 2))
    kn = k0 + n
    an = a0 + n / 2.0
    bn = b0 + 0.5 * ss + k0 * n * (ybar - m0) ** 2 / (2.0 * kn)
    return float(
        gammaln(an)
        - gammaln(a0)
        + a0 * math.log(b0)
        - an * math.log(bn)
        + 0.5 * math.log(k0 / kn)
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def student_t_logpdf(x, m0, gamma0, nu0, w0) -> float:
    """Log prior-predictive density of one point; Student-t with nu0 dof."""
    a0, b0 = nu0 / 2.0, 1.0 / (2.0 * w0)
    scale2 = b0 * (gamma0 + 1.0) / (a0 * gamma0)
    dof = 2.0 * a0
    z = (x - m0) ** 2 / scale2
    return float(
        gammaln((dof + 1) / 2)
        - gammaln(dof / 2)
        - 0.5 * math.log(dof * math.pi * scale2)
        - (dof + 1) / 2 * math.log1p(z / dof)
    )


def reference_expected_log_resp(alpha, gamma, m, w, nu, y) -> list:
    """Scalar loop over components, D = 1 only."""
    out = []
    a_sum = sum(alpha)
    for k in range(len(alpha)):
        e_log_pi = digamma(alpha[k]) - digamma(a_sum)
        e_log_lam = digamma(nu[k] / 2.0) + math.log(2.0) + math.log(w[k])
        quad = 1.0 / gamma[k] + nu[k] * w[k] * (y - m[k]) ** 2
        out.append(e_log_pi + 0.5 * e_log_lam - 0.5 * math.log(2 * math.pi) - 0.5 * quad)
    return out


def reference_m_step(alpha0, gamma0, m0, w0, nu0, y, r) -> dict:
    """Textbook VB-GMM update for D = 1 written with explicit loops."""
    n, k = len(r), len(r[0])
    out = {"alpha": [], "gamma": [], "m": [], "w": [], "nu": []}
    for j in range(k):
        nk = sum(r[i][j] for i in range(n))
        xk = sum(r[i][j] * y[i] for i in range(n)) / nk if nk > 0 else m0
        sk = sum(r[i][j] * (y[i] - xk) ** 2 for i in range(n)) / nk if nk > 0 else 0.0
        g = gamma0 + nk
        w_inv = 1.0 / w0 + nk * sk + gamma0 * nk / g * (xk - m0) ** 2
        out["alpha"].append(alpha0 + nk)
        out["gamma"].append(g)
        out["m"].append((gamma0 * m0 + nk * xk) / g)
        out["w"].append(1.0 / w_inv)
        out["nu"].append(nu0 + nk)
    return out


def run_suite(seed: int = 0) -> list[OracleReport]:
    """Oracle cross-checks emitted by ``qavb verify``."""
    from . import anneal, gmm, smallmat

    rng = np.random.default_rng(seed)
    reports = []

    err = 0.0
    n = 200
    for _ in range(n):
        k = int(rng.integers(2, 9))
        a = rng.uniform(-5, 5, size=(k, k))
        a = np.triu(a) + np.triu(a, 1).T
        err = max(err, np.abs(smallmat.stable_exp_density(a) - taylor_exp_density(a)).max())
    reports.append(OracleReport("exp_density_vs_taylor", float(err), n, 1e-10, err <= 1e-10))

    err = 0.0
    for k in range(3, 9):
        h = anneal.hopping_matrix(k)
        err = max(err, np.abs(smallmat.sym_eig(h).values - charpoly_roots(h)).max())
    # repeated roots of the characteristic polynomial are only ~sqrt(eps) accurate
    reports.append(OracleReport("hopping_spectrum_vs_charpoly", float(err), 6, 1e-6, err <= 1e-6))

    gap = -np.inf
    for k in (3, 4, 5):
        h = rng.normal(size=k)
        state = anneal.AnnealState(0, 2.0, 0.7)
        gap = max(gap, anneal.estep_optimality_check(h, state, anneal.hopping_matrix(k), 300, seed))
    reports.append(OracleReport("estep_global_minimum", float(max(gap, 0.0)), 900, 1e-9, gap <= 1e-9))

    err = 0.0
    for nn in (1, 5, 20):
        data = gmm.Dataset(rng.normal(1.0, 2.0, size=(nn, 1)))
        prior = gmm.GmmPrior(k=1, d=1, alpha0=1.0, gamma0=0.5, nu0=3.0)
        post = gmm.m_step(prior, data, np.ones((nn, 1)))
        bound = gmm.elbo(prior, post, data, np.ones((nn, 1)))
        err = max(err, bound - student_t_evidence(prior, data))
    reports.append(OracleReport("elbo_below_evidence", float(max(err, 0.0)), 3, 1e-9, err <= 1e-9))
    return reports
