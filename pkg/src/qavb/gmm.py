"""Bayesian Gaussian mixture: conjugate hyperparameters and VB quantities.

The parameter posterior is kept in the Dirichlet x Gauss-Wishart family.
Responsibilities enter the parameter update with a common weight ``w``;
``w = 1`` is ordinary VB, ``w = beta * (1 - s)`` is the annealed update.
The prior is never tempered.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import digamma, gammaln

from .smallmat import shannon_entropy, von_neumann_entropy

LOG_2PI = np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)


class InvalidPosteriorError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


class NumericalDegeneracyError(ArithmeticError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DatasetFormatError(f"points must be (N, D), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DatasetFormatError("dataset contains non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class GmmPrior:
    k: int
    d: int
    alpha0: float = 0.001
    gamma0: float = 0.001
    m0: np.ndarray = None
    w0: np.ndarray = None
    nu0: float = None

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise InvalidParameterError("k and d must be positive")
        m0 = np.zeros(self.d) if self.m0 is None else np.asarray(self.m0, float)
        w0 = np.eye(self.d) if self.w0 is None else np.asarray(self.w0, float)
        nu0 = float(self.d) if self.nu0 is None else float(self.nu0)
        if m0.shape != (self.d,) or w0.shape != (self.d, self.d):
            raise InvalidParameterError("m0 / w0 shapes do not match d")
        if self.alpha0 <= 0 or self.gamma0 <= 0:
            raise InvalidParameterError("alpha0 and gamma0 must be positive")
        if not np.array_equal(w0, w0.T):
            raise InvalidParameterError("w0 must be symmetric")
        try:
            np.linalg.cholesky(w0)
        except np.linalg.LinAlgError as exc:
            raise InvalidParameterError("w0 must be positive definite") from exc
        # nu0 = d - 1 is the improper boundary used in some published setups
        if nu0 < self.d - 1:
            raise InvalidParameterError(f"nu0 must be >= d - 1, got {nu0}")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "nu0", nu0)

    @property
    def proper(self) -> bool:
        return self.nu0 > self.d - 1

    @classmethod
    def standard(cls, k: int, d: int, nu0_literal: bool = False) -> "GmmPrior":
        """alpha0 = gamma0 = 1e-3, m0 = 0, w0 = I; nu0 = d unless literal (nu0 = 1)."""
        return cls(k=k, d=d, nu0=1.0 if nu0_literal else float(d))

    def as_posterior(self) -> "GmmPosterior":
        k, d = self.k, self.d
        return GmmPosterior(
            alpha=np.full(k, self.alpha0),
            gamma=np.full(k, self.gamma0),
            m=np.tile(self.m0, (k, 1)),
            w=np.tile(self.w0, (k, 1, 1)),
            nu=np.full(k, self.nu0),
        )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "alpha0": self.alpha0,
            "gamma0": self.gamma0,
            "m0": self.m0.tolist(),
            "w0": self.w0.tolist(),
            "nu0": self.nu0,
        }


@dataclass(frozen=True, eq=False)
class GmmPosterior:
    """Per-component hyperparameters, arrays indexed by component first."""

    alpha: np.ndarray
    gamma: np.ndarray
    m: np.ndarray
    w: np.ndarray
    nu: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    @property
    def d(self) -> int:
        return self.m.shape[1]

    def permuted(self, perm) -> "GmmPosterior":
        perm = np.asarray(perm)
        return GmmPosterior(
            self.alpha[perm], self.gamma[perm], self.m[perm], self.w[perm], self.nu[perm]
        )

    def logdet_w(self) -> np.ndarray:
        if "logdet" not in self._cache:
            sign, logdet = np.linalg.slogdet(self.w)
            if np.any(sign <= 0):
                raise InvalidPosteriorError("posterior scale matrix is not SPD")
            self._cache["logdet"] = logdet
        return self._cache["logdet"]

    def expected_log_pi(self) -> np.ndarray:
        return digamma(self.alpha) - digamma(self.alpha.sum())

    def expected_logdet_lambda(self) -> np.ndarray:
        j = np.arange(1, self.d + 1)
        psi = digamma((self.nu[:, None] + 1.0 - j[None, :]) / 2.0).sum(axis=1)
        return psi + self.d * LOG_2 + self.logdet_w()

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma.tolist(),
            "m": self.m.tolist(),
            "w": self.w.tolist(),
            "nu": self.nu.tolist(),
        }


def expected_log_resp(post: GmmPosterior, y) -> np.ndarray:
    """Expected log joint ``E[ln pi_k + ln N(y | mu_k, Lambda_k^-1)]``.

    ``y`` may be a single D-vector (returns shape ``(K,)``) or an ``(N, D)``
    array (returns ``(N, K)``).  This is minus the expected classical
    energy of assigning ``y`` to component ``k``.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    d = post.d
    diff = y2[:, None, :] - post.m[None, :, :]
    maha = np.einsum("nkd,kde,nke->nk", diff, post.w, diff)
    h = (
        post.expected_log_pi()
        + 0.5 * post.expected_logdet_lambda()
        - 0.5 * d * LOG_2PI
        - 0.5 * (d / post.gamma + post.nu * maha)
    )
    return h[0] if single else h


def m_step(prior: GmmPrior, data: Dataset, r, w: float = 1.0) -> GmmPosterior:
    """Conjugate parameter update from responsibilities weighted by ``w``."""
    if w < 0 or not np.isfinite(w):
        raise InvalidParameterError(f"weight must be finite and >= 0, got {w}")
    r = np.asarray(r, dtype=np.float64)
    y = data.points
    if r.shape != (data.n, prior.k):
        raise InvalidParameterError(f"responsibilities shape {r.shape} != {(data.n, prior.k)}")
    if w == 0.0:
        return prior.as_posterior()

    counts = r.sum(axis=0)
    n_t = w * counts
    filled = counts > 0.0
    safe = np.where(filled, counts, 1.0)
    xbar = np.where(filled[:, None], (r.T @ y) / safe[:, None], prior.m0[None, :])
    # weighted scatter about xbar, already multiplied by the tempered count
    dev = y[None, :, :] - xbar[:, None, :]
    scatter = w * np.einsum("nk,knd,kne->kde", r, dev, dev)

    alpha = prior.alpha0 + n_t
    gamma = prior.gamma0 + n_t
    m = (prior.gamma0 * prior.m0[None, :] + n_t[:, None] * xbar) / gamma[:, None]
    dm = xbar - prior.m0[None, :]
    coef = prior.gamma0 * n_t / gamma
    w_inv = np.linalg.inv(prior.w0)[None] + scatter + coef[:, None, None] * np.einsum(
        "kd,ke->kde", dm, dm
    )
    w_inv = 0.5 * (w_inv + np.swapaxes(w_inv, 1, 2))
    try:
        wk = np.linalg.inv(w_inv)
        np.linalg.cholesky(wk)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("posterior scale matrix is singular") from exc
    wk = 0.5 * (wk + np.swapaxes(wk, 1, 2))
    nu = prior.nu0 + n_t
    return GmmPosterior(alpha, gamma, m, wk, nu)


def _log_wishart_norm(w, nu, logdet_w, d, include_gamma=True):
    """ln B(W, nu) of the Wishart density; optionally without the ln Gamma_d part."""
    out = -0.5 * nu * logdet_w - 0.5 * nu * d * LOG_2
    if include_gamma:
        j = np.arange(1, d + 1)
        lgd = 0.25 * d * (d - 1) * np.log(np.pi) + gammaln(
            (np.asarray(nu)[..., None] + 1.0 - j) / 2.0
        ).sum(axis=-1)
        out = out - lgd
    return out


def kl_posterior_prior(post: GmmPosterior, prior: GmmPrior) -> float:
    """KL(q(theta) || p(theta)) for the Dirichlet x Gauss-Wishart family.

    For an improper prior (nu0 = d - 1) the prior's infinite ln Gamma_d
    normalizer is dropped, i.e. the KL is reported up to that constant.
    """
    d, k = post.d, post.k
    a, a0 = post.alpha, np.full(k, prior.alpha0)
    kl_dir = (
        gammaln(a.sum())
        - gammaln(a).sum()
        - gammaln(a0.sum())
        + gammaln(a0).sum()
        + np.dot(a - a0, digamma(a) - digamma(a.sum()))
    )

    same = (
        (post.gamma == prior.gamma0)
        & (post.nu == prior.nu0)
        & np.all(post.m == prior.m0[None, :], axis=1)
        & np.all(post.w == prior.w0[None], axis=(1, 2))
    )
    if not prior.proper:
        # counts below float resolution of nu: the component is the prior
        same |= post.nu == prior.nu0
    if np.all(same):
        return float(kl_dir)

    live = ~same
    p = post if np.all(live) else post.permuted(np.flatnonzero(live))
    e_logdet = p.expected_logdet_lambda()
    logdet_w = p.logdet_w()
    _, logdet_w0 = np.linalg.slogdet(prior.w0)
    w0_inv = np.linalg.inv(prior.w0)

    dm = p.m - prior.m0[None, :]
    kl_gauss = 0.5 * (
        d * prior.gamma0 / p.gamma
        + prior.gamma0 * p.nu * np.einsum("kd,kde,ke->k", dm, p.w, dm)
        - d
        + d * np.log(p.gamma / prior.gamma0)
    )
    e_log_q = (
        _log_wishart_norm(p.w, p.nu, logdet_w, d)
        + 0.5 * (p.nu - d - 1.0) * e_logdet
        - 0.5 * p.nu * d
    )
    e_log_p = (
        _log_wishart_norm(prior.w0, prior.nu0, logdet_w0, d, include_gamma=prior.proper)
        + 0.5 * (prior.nu0 - d - 1.0) * e_logdet
        - 0.5 * p.nu * np.einsum("de,ked->k", w0_inv, p.w)
    )
    return float(kl_dir + np.sum(kl_gauss + e_log_q - e_log_p))


def elbo(prior: GmmPrior, post: GmmPosterior, data: Dataset, r, densities=None) -> float:
    """Evidence lower bound, i.e. the log evidence minus KL(q || posterior).

    The hidden-state entropy is taken from ``densities`` (von Neumann) when
    given, otherwise from the responsibilities themselves.
    """
    r = np.asarray(r, dtype=np.float64)
    if post.k != prior.k or post.d != prior.d:
        raise InvalidParameterError("prior and posterior dimensions differ")
    if r.shape != (data.n, prior.k) or (data.n and data.d != prior.d):
        raise InvalidParameterError("responsibilities / data dimension mismatch")
    if data.n == 0:
        energy, entropy = 0.0, 0.0
    else:
        h = expected_log_resp(post, data.points)
        energy = weighted_energy(r, h)
        if densities is None:
            entropy = float(np.sum(shannon_entropy(r)))
        else:
            entropy = float(np.sum(von_neumann_entropy(densities)))
    return energy + entropy - kl_posterior_prior(post, prior)


def weighted_energy(r, h) -> float:
    """sum r * h with 0 * (-inf) = 0 for excluded components."""
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(r > 0.0, r * h, 0.0)))


def count_clusters(r, threshold: float = 1.0) -> int:
    """Number of components whose total responsibility reaches ``threshold``."""
    if threshold <= 0:
        raise InvalidParameterError("threshold must be positive")
    return int(np.sum(np.asarray(r).sum(axis=0) >= threshold))


def load_csv(path) -> Dataset:
    """Read one point per row; a non-numeric first row is taken as a header."""
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric value in {row}")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(vals)}"
                )
            if not all(np.isfinite(vals)):
                raise DatasetFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return Dataset(np.array(rows))


def save_csv(data: Dataset, path, header: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"x{j}" for j in range(data.d)])
        for row in data.points:
            writer.writerow([repr(float(v)) for v in row])

