"""Gaussian mixture parameters with cached factorizations, and the repair policy
that turns noisy parameter estimates into a valid mixture."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EIG_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-6  # count floor 1e-6 * N expressed as a weight
LOG_2PI = np.log(2.0 * np.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MixtureModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    chol_inv: np.ndarray = field(init=False, repr=False)
    precisions: np.ndarray = field(init=False, repr=False)
    logdets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.array(self.means, dtype=float))
        k, d = mu.shape
        cov = np.array(self.covariances, dtype=float).reshape(k, d, d)
        if w.shape != (k,):
            raise ModelError(f"{w.size} weights for {k} components")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ModelError("weights must be positive and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ModelError("non-finite mixture parameters")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ModelError("a covariance is not positive definite") from None
        eye = np.broadcast_to(np.eye(d), cov.shape)
        chol_inv = np.linalg.solve(chol, eye)
        prec = np.swapaxes(chol_inv, 1, 2) @ chol_inv
        prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
        logdets = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        for name, arr in [("weights", w), ("means", mu), ("covariances", cov), ("chol", chol),
                          ("chol_inv", chol_inv), ("precisions", prec), ("logdets", logdets)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, x) -> np.ndarray:
        """log(pi_k N(x | mu_k, Sigma_k)) for each row of ``x``; shape (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x[:, None, :] - self.means[None, :, :]
        z = (self.chol_inv[None] @ diff[..., None])[..., 0]
        maha = np.einsum("nki,nki->nk", z, z)
        return np.log(self.weights) - 0.5 * (self.D * LOG_2PI + self.logdets) - 0.5 * maha

    def log_density(self, x) -> np.ndarray:
        return np.logaddexp.reduce(self.component_log_densities(x), axis=1)

    def responsibilities(self, x) -> np.ndarray:
        comp = self.component_log_densities(x)
        return np.exp(comp - np.logaddexp.reduce(comp, axis=1, keepdims=True))

    def hard_assign(self, x) -> np.ndarray:
        """Argmax-responsibility labels; ties go to the lowest index."""
        return np.argmax(self.component_log_densities(x), axis=1)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "D": self.D,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MixtureModel":
        try:
            return cls(obj["weights"], obj["means"], obj["covariances"])
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model document: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def single_component(mean, cov) -> MixtureModel:
    return MixtureModel([1.0], [mean], [cov])


@dataclass
class RepairLog:
    clamped_weights: int = 0
    repaired_covariances: int = 0
    clipped_means: int = 0

    def add(self, other: "RepairLog"):
        self.clamped_weights += other.clamped_weights
        self.repaired_covariances += other.repaired_covariances
        self.clipped_means += other.clipped_means


def repair_covariance(cov, eig_floor: float = EIG_FLOOR, eig_cap: float | None = None) -> tuple[np.ndarray, bool]:
    """Symmetrize, then clip eigenvalues into [eig_floor, eig_cap].

    A symmetric matrix whose spectrum already lies in range is returned
    unchanged (no eigendecomposition round trip).
    """
    a = np.asarray(cov, dtype=float)
    a = 0.5 * (a + a.T)
    fallback = np.eye(a.shape[0]) * (eig_floor if eig_cap is None else eig_cap)
    if not np.all(np.isfinite(a)):
        return fallback, True
    vals, vecs = np.linalg.eigh(a)
    if not np.all(np.isfinite(vals)):
        return fallback, True
    cap = np.inf if eig_cap is None else eig_cap
    if vals[0] >= eig_floor and vals[-1] <= cap:
        return a, False
    vals = np.clip(vals, eig_floor, cap)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T), True


def repair_model(weights, means, covariances, eig_floor: float = EIG_FLOOR,
                 weight_floor: float = WEIGHT_FLOOR, unit_box: bool = False) -> tuple[MixtureModel, RepairLog]:
    """Project raw (possibly noisy, invalid) parameters onto a valid mixture.

    Weights are clamped below at ``weight_floor`` and renormalized; each
    covariance is symmetrized and its eigenvalues clipped at ``eig_floor``.
    With ``unit_box`` the data are known to lie in [-1, 1]^D, so means are
    clipped to the box and covariance eigenvalues capped at D, the largest
    variance such data can have.
    """
    log = RepairLog()
    w = np.asarray(weights, dtype=float)
    w = np.where(np.isfinite(w), w, weight_floor)
    low = w < weight_floor
    log.clamped_weights = int(low.sum())
    w = np.where(low, weight_floor, w)
    w = w / w.sum()
    means = np.asarray(means, dtype=float)
    cap = None
    if unit_box:
        clipped = np.clip(np.nan_to_num(means, nan=0.0), -1.0, 1.0)
        log.clipped_means = int(np.any(clipped != means, axis=1).sum())
        means, cap = clipped, float(means.shape[1])
    covs = []
    for c in np.asarray(covariances, dtype=float):
        fixed, changed = repair_covariance(c, eig_floor, cap)
        log.repaired_covariances += int(changed)
        covs.append(fixed)
    return MixtureModel(w, means, np.array(covs)), log
