"""Noise calibration under zCDP composition, noise samplers and sensitivity audits.

Accounting used by the two fitting mechanisms:

* ``gaussian_mog_hard`` releases, per iteration and cluster, a noisy count
  (sensitivity 1), a noisy coordinate sum (sensitivity 2 per coordinate) and
  the D(D+1)/2 unique entries of a noisy second moment (diagonal
  sensitivity 1, off-diagonal 2). A Gaussian release with sensitivity s at
  scale sigma costs s^2 / (2 sigma^2) zCDP, so one iteration costs
  (1 + 4D + D + 2D(D-1)) / (2 sigma^2) = r / (2 sigma^2) with
  r = 1 + 3D + 2D^2. Hard assignment partitions the rows, so clusters
  compose in parallel; tau iterations add up to rho = r tau / (2 sigma^2).
* ``lloyd_mixed`` uses Laplace noise with scale b = sigma for the counts and
  sums. Per iteration that is pure (2D + 1)/sigma-DP (L1 sensitivity 1 for
  the count plus 2D for the sum), composed over tau iterations to
  (2D + 1) tau / sigma and converted to zCDP as eps0^2 / 2, i.e.
  (2D + 1)^2 tau^2 / (2 sigma^2). The closing Gaussian second moment adds
  D(2D - 1) / (2 sigma^2), hence r = (2D + 1)^2 tau^2 + D(2D - 1) and
  rho = r / (2 sigma^2).

Either rho converts to (rho + 2 sqrt(rho ln(1/delta)), delta)-DP, and sigma
is the closed-form solution that makes that epsilon equal the budget.

The DPMoG-hard update perturbs the *centered* second moment around the fresh
noisy mean, while the accounting above bounds the uncentered sum of x x^T.
When a noisy mean leaves the unit box the centered entries can exceed those
ranges. The mechanism is implemented as published; ``audit_sensitivity``
checks the uncentered statistics the accounting refers to.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset

MECHANISMS = ("gaussian_mog_hard", "lloyd_mixed")


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    tau: int
    mechanism: str = "gaussian_mog_hard"

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise PrivacyError(f"epsilon must be a positive finite real, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise PrivacyError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise PrivacyError(f"tau must be a positive integer, got {self.tau}")
        if self.mechanism not in MECHANISMS:
            raise PrivacyError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")


@dataclass(frozen=True)
class NoiseScale:
    sigma: float
    r: int
    rho: float

    def epsilon_for(self, delta: float) -> float:
        return self.rho + 2.0 * math.sqrt(self.rho * math.log(1.0 / delta))


def r_mog_hard(D: int) -> int:
    return 1 + 3 * D + 2 * D * D


def r_lloyd(D: int, tau: int) -> int:
    return (2 * D + 1) ** 2 * tau ** 2 + D * (2 * D - 1)


def calibrate_sigma(params: PrivacyParams, D: int) -> NoiseScale:
    """Smallest Gaussian scale whose zCDP cost converts to exactly (epsilon, delta)."""
    if D < 1:
        raise PrivacyError("dimension must be >= 1")
    log_inv_delta = math.log(1.0 / params.delta)
    ratio = (math.sqrt(log_inv_delta + params.epsilon) + math.sqrt(log_inv_delta)) / params.epsilon
    if params.mechanism == "gaussian_mog_hard":
        r = r_mog_hard(D)
        weight = r * params.tau
    else:
        r = r_lloyd(D, params.tau)
        weight = r
    sigma = math.sqrt(weight / 2.0) * ratio
    rho = weight / (2.0 * sigma * sigma)
    return NoiseScale(sigma=sigma, r=r, rho=rho)


def privacy_record(params: PrivacyParams, scale: NoiseScale) -> dict:
    out = asdict(params)
    out.update(r=scale.r, sigma=scale.sigma, rho=scale.rho)
    return out


class NoiseSource:
    """A seeded stream that counts how many noise values it has released."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.draws = 0

    def gaussian(self, sigma: float, count: int) -> np.ndarray:
        self.draws += count
        return sample_gaussian(sigma, count, self.rng)

    def laplace(self, scale: float, count: int) -> np.ndarray:
        self.draws += count
        return sample_laplace(scale, count, self.rng)


def sample_gaussian(sigma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise PrivacyError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(count)
    return rng.normal(0.0, sigma, size=count)


def sample_laplace(scale: float, count: int, rng: np.random.Generator) -> np.ndarray:
    if scale < 0:
        raise PrivacyError("scale must be >= 0")
    if scale == 0:
        return np.zeros(count)
    return rng.laplace(0.0, scale, size=count)


def spawn_streams(seed: int, names) -> dict[str, np.random.Generator]:
    """Independent generators for each named stage, derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(c) for name, c in zip(names, children)}


def sym_pack(v, D: int) -> np.ndarray:
    """Fill the upper triangle row-major from ``v`` and mirror it below the diagonal."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != D * (D + 1) // 2:
        raise PrivacyError(f"expected {D * (D + 1) // 2} entries for D={D}, got {v.size}")
    out = np.zeros((D, D))
    iu = np.triu_indices(D)
    out[iu] = v
    out.T[iu] = v
    return out


SENSITIVITY_BOUNDS = {"count": 1.0, "sum": 2.0, "moment_diag": 1.0, "moment_offdiag": 2.0}


class SensitivityViolation(AssertionError):
    pass


@dataclass
class SensitivityReport:
    count: float
    sum: float
    moment_diag: float
    moment_offdiag: float
    changed_row: int

    @property
    def ok(self) -> bool:
        return all(getattr(self, k) <= b for k, b in SENSITIVITY_BOUNDS.items())


def _cluster_stats(x, labels, k):
    counts = np.zeros(k)
    sums = np.zeros((k, x.shape[1]))
    moments = np.zeros((k, x.shape[1], x.shape[1]))
    np.add.at(counts, labels, 1.0)
    np.add.at(sums, labels, x)
    np.add.at(moments, labels, x[:, :, None] * x[:, None, :])
    return counts, sums, moments


def audit_sensitivity(d1: Dataset, d2: Dataset, assignment_fn, strict: bool = True) -> SensitivityReport:
    """Measure how much per-cluster statistics move between neighboring datasets.

    ``assignment_fn`` maps an (N, D) array to integer cluster labels; it is
    applied to both datasets, so the unchanged rows keep their clusters while
    the replaced row may move. Raises ``SensitivityViolation`` when ``strict``
    and any bound is exceeded.
    """
    a, b = d1.rows, d2.rows
    if a.shape != b.shape:
        raise PrivacyError("neighboring datasets must have the same shape")
    if not (d1.in_unit_box() and d2.in_unit_box()):
        raise PrivacyError("audit requires both datasets inside [-1, 1]^D")
    diff = np.flatnonzero(np.any(a != b, axis=1))
    if diff.size != 1:
        raise PrivacyError(f"datasets must differ in exactly one row, found {diff.size}")
    la = np.asarray(assignment_fn(a), dtype=np.int64)
    lb = np.asarray(assignment_fn(b), dtype=np.int64)
    k = int(max(la.max(), lb.max())) + 1
    # Only rows whose value or cluster changed move the statistics; summing
    # just those avoids rounding noise from re-adding the unchanged rows.
    moved = np.flatnonzero((la != lb) | np.any(a != b, axis=1))
    ca, sa, ma = _cluster_stats(a[moved], la[moved], k)
    cb, sb, mb = _cluster_stats(b[moved], lb[moved], k)
    dm = np.abs(ma - mb)
    D = a.shape[1]
    diag = np.einsum("kii->ki", dm)
    off = dm[:, ~np.eye(D, dtype=bool)] if D > 1 else np.zeros((k, 1))
    report = SensitivityReport(
        count=float(np.abs(ca - cb).max()),
        sum=float(np.abs(sa - sb).max()),
        moment_diag=float(diag.max()),
        moment_offdiag=float(off.max()),
        changed_row=int(diff[0]),
    )
    if strict and not report.ok:
        raise SensitivityViolation(f"sensitivity bound exceeded: {report}")
    return report
