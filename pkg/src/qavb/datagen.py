"""Seeded synthetic Gaussian-mixture datasets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .gmm import Dataset, save_csv


class GenSpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    k_gen: int = 10
    n: int = 200
    d: int = 2
    seed: int = 0
    mean_box: float = 10.0
    cov_scale: float = 1.0
    # covariance eigenvalues are cov_scale * U(eig_low, eig_high)
    eig_low: float = 0.3
    eig_high: float = 1.5
    weight_mode: Literal["uniform", "dirichlet"] = "uniform"

    def __post_init__(self):
        if self.k_gen < 1 or self.d < 1:
            raise GenSpecError("k_gen and d must be >= 1")
        if self.n < self.k_gen:
            raise GenSpecError("n must be >= k_gen")
        if self.cov_scale <= 0 or not 0 < self.eig_low <= self.eig_high:
            raise GenSpecError("covariance scale and eigenvalue range must be positive")
        if self.mean_box < 0:
            raise GenSpecError("mean_box must be >= 0")
        if self.weight_mode not in ("uniform", "dirichlet"):
            raise GenSpecError(f"unknown weight_mode {self.weight_mode!r}")


@dataclass(frozen=True)
class GroundTruth:
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    labels: np.ndarray

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "weights": self.weights.tolist(),
            "labels": self.labels.tolist(),
        }


def _random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def generate(spec: GenSpec) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    k, d = spec.k_gen, spec.d
    means = rng.uniform(-spec.mean_box, spec.mean_box, size=(k, d))
    covs = np.empty((k, d, d))
    for j in range(k):
        q = _random_rotation(rng, d)
        eig = spec.cov_scale * rng.uniform(spec.eig_low, spec.eig_high, size=d)
        c = (q * eig) @ q.T
        covs[j] = 0.5 * (c + c.T)
    if spec.weight_mode == "uniform":
        weights = np.full(k, 1.0 / k)
    else:
        weights = rng.dirichlet(np.ones(k))
    labels = rng.choice(k, size=spec.n, p=weights)
    chol = np.linalg.cholesky(covs)
    z = rng.standard_normal((spec.n, d))
    points = means[labels] + np.einsum("nij,nj->ni", chol[labels], z)
    return Dataset(points), GroundTruth(means, covs, weights, labels)


def write(spec: GenSpec, data_path, manifest_path=None) -> tuple[Dataset, GroundTruth]:
    """Generate, then write the CSV and a JSON truth manifest next to it."""
    data, truth = generate(spec)
    data_path = Path(data_path)
    save_csv(data, data_path)
    manifest_path = Path(manifest_path) if manifest_path else data_path.with_suffix(".truth.json")
    payload = {"spec": asdict(spec), "seed": spec.seed, **truth.to_dict()}
    manifest_path.write_text(json.dumps(payload, indent=2) + "\n")
    return data, truth
