"""Sub-cluster mixture fitting: private hard EM, private Lloyd with covariances,
and the non-private EM / hard-EM / Lloyd baselines.

All fitters share one repair policy (``model.repair_model``) so that private
and non-private outputs are directly comparable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import DataError, Dataset
from .model import WEIGHT_FLOOR, MixtureModel, RepairLog, repair_model
from .privacy import NoiseSource, PrivacyParams, calibrate_sigma, sym_pack

INIT_COV_SCALE = 0.2


class DegenerateFitError(RuntimeError):
    pass


@dataclass
class FitTrace:
    method: str
    seed: int | None = None
    privacy: dict | None = None
    sizes: list = field(default_factory=list)  # per-iteration true cluster sizes
    clamped_counts: list = field(default_factory=list)
    repairs: RepairLog = field(default_factory=RepairLog)
    raw_weights: list | None = None
    raw_covariances: list | None = None
    noise_draws: int = 0
    log_likelihood: list = field(default_factory=list)
    reseeded: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("raw_covariances")
        return out


def _check_inputs(data: Dataset, K: int):
    if K < 1:
        raise DataError("K must be >= 1")
    if K > data.n:
        raise DataError(f"K={K} exceeds the number of rows N={data.n}")
    if not data.in_unit_box():
        raise DataError("fitting requires data inside [-1, 1]^D; rescale first")


def init_uniform(K: int, D: int, rng: np.random.Generator) -> MixtureModel:
    """Data-independent start: uniform means in the box, 0.2 I covariances, equal weights."""
    means = rng.uniform(-1.0, 1.0, size=(K, D))
    covs = np.repeat(INIT_COV_SCALE * np.eye(D)[None], K, axis=0)
    return MixtureModel(np.full(K, 1.0 / K), means, covs)


def init_kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> MixtureModel:
    """k-means++ seeding from the data (non-private baselines only)."""
    n, D = x.shape
    idx = [int(rng.integers(n))]
    d2 = np.sum((x - x[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            raise DegenerateFitError(f"fewer than K={K} distinct rows")
        j = int(rng.choice(n, p=d2 / total))
        idx.append(j)
        d2 = np.minimum(d2, np.sum((x - x[j]) ** 2, axis=1))
    covs = np.repeat(INIT_COV_SCALE * np.eye(D)[None], K, axis=0)
    return MixtureModel(np.full(K, 1.0 / K), x[idx], covs)


def _resolve_init(init, data: Dataset, K: int, default_rng) -> MixtureModel:
    if isinstance(init, MixtureModel):
        if init.K != K or init.D != data.d:
            raise DataError(f"init model has shape K={init.K}, D={init.D}; expected K={K}, D={data.d}")
        return init
    rng = np.random.default_rng(init) if init is not None else default_rng
    return init_uniform(K, data.d, rng)


def fit_dpmog_hard(data: Dataset, K: int, params: PrivacyParams, init=None, rng=None,
                   sigma: float | None = None) -> tuple[MixtureModel, FitTrace]:
    """Differentially private hard-assignment EM.

    Each iteration assigns every row to its argmax-responsibility component,
    then releases a Gaussian-noised count, coordinate sum and centered second
    moment per cluster. Cluster membership is rebuilt from scratch on every
    iteration.

    Parameters
    ----------
    init : MixtureModel, int or None
        Starting parameters, or a seed for the data-independent uniform
        start. ``None`` draws the start from ``rng``.
    rng : np.random.Generator
        Noise stream.
    sigma : float, optional
        Override the calibrated noise scale; ``0.0`` gives the zero-noise
        reduction used in tests.
    """
    if params.mechanism != "gaussian_mog_hard":
        raise DataError(f"fit_dpmog_hard needs mechanism gaussian_mog_hard, got {params.mechanism}")
    _check_inputs(data, K)
    rng = rng if rng is not None else np.random.default_rng()
    scale = calibrate_sigma(params, data.d)
    noise_sigma = scale.sigma if sigma is None else float(sigma)
    noise = NoiseSource(rng)
    model = _resolve_init(init, data, K, rng)

    x = data.rows
    n, D = x.shape
    count_floor = WEIGHT_FLOOR * n
    trace = FitTrace("dpmog_hard", privacy={**asdict(params), "r": scale.r, "sigma": noise_sigma,
                                            "rho": scale.rho})
    for _ in range(params.tau):
        labels = model.hard_assign(x)
        sizes = np.bincount(labels, minlength=K)
        trace.sizes.append(sizes.tolist())
        weights = np.empty(K)
        means = np.empty((K, D))
        covs = np.empty((K, D, D))
        raw_w = np.empty(K)
        clamped = 0
        for k in range(K):
            members = x[labels == k]
            nk = sizes[k] + noise.gaussian(noise_sigma, 1)[0]
            raw_w[k] = nk / n
            if nk < count_floor:
                nk = count_floor
                clamped += 1
            mu = (members.sum(axis=0) + noise.gaussian(noise_sigma, D)) / nk
            diff = members - mu
            moment = diff.T @ diff + sym_pack(noise.gaussian(noise_sigma, D * (D + 1) // 2), D)
            weights[k] = nk / n
            means[k] = mu
            covs[k] = moment / nk
        trace.clamped_counts.append(clamped)
        trace.raw_weights = raw_w.tolist()
        trace.raw_covariances = covs.tolist()
        model, log = repair_model(weights, means, covs, unit_box=True)
        trace.repairs.add(log)
    trace.noise_draws = noise.draws
    return model, trace


def fit_dplloyd_mog(data: Dataset, K: int, params: PrivacyParams, rng=None, sigma: float | None = None,
                    init_means=None) -> tuple[MixtureModel, FitTrace]:
    """Private Lloyd iterations followed by one noisy covariance release per cluster.

    Counts and sums get Laplace noise with scale ``sigma``; the closing
    centered second moments get Gaussian noise with the same ``sigma``. The
    covariance pass reuses the assignment from the last Lloyd iteration.
    """
    if params.mechanism != "lloyd_mixed":
        raise DataError(f"fit_dplloyd_mog needs mechanism lloyd_mixed, got {params.mechanism}")
    _check_inputs(data, K)
    rng = rng if rng is not None else np.random.default_rng()
    scale = calibrate_sigma(params, data.d)
    noise_sigma = scale.sigma if sigma is None else float(sigma)
    noise = NoiseSource(rng)

    x = data.rows
    n, D = x.shape
    count_floor = WEIGHT_FLOOR * n
    if init_means is None:
        centers = rng.uniform(-1.0, 1.0, size=(K, D))
    else:
        centers = np.array(init_means, dtype=float).reshape(K, D)
    trace = FitTrace("dplloyd_mog", privacy={**asdict(params), "r": scale.r, "sigma": noise_sigma,
                                             "rho": scale.rho})
    counts = np.empty(K)
    for _ in range(params.tau):
        labels = nearest_center(x, centers)
        sizes = np.bincount(labels, minlength=K)
        trace.sizes.append(sizes.tolist())
        clamped = 0
        new = np.empty_like(centers)
        for k in range(K):
            nk = sizes[k] + noise.laplace(noise_sigma, 1)[0]
            if nk < count_floor:
                nk = count_floor
                clamped += 1
            counts[k] = nk
            new[k] = (x[labels == k].sum(axis=0) + noise.laplace(noise_sigma, D)) / nk
        centers = np.clip(new, -1.0, 1.0)
        trace.clamped_counts.append(clamped)

    covs = np.empty((K, D, D))
    for k in range(K):
        diff = x[labels == k] - centers[k]
        moment = diff.T @ diff + sym_pack(noise.gaussian(noise_sigma, D * (D + 1) // 2), D)
        covs[k] = moment / counts[k]
    trace.raw_weights = (counts / n).tolist()
    trace.raw_covariances = covs.tolist()
    model, log = repair_model(counts / n, centers, covs, unit_box=True)
    trace.repairs.add(log)
    trace.noise_draws = noise.draws
    return model, trace


def nearest_center(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest center per row; ties go to the lowest index."""
    d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def responsibilities(model: MixtureModel, x) -> np.ndarray:
    """Posterior component probabilities, computed in log space; a vector for a single point."""
    x = np.asarray(x, dtype=float)
    out = model.responsibilities(x)
    return out[0] if x.ndim == 1 else out


def _m_step(x, gamma):
    nk = gamma.sum(axis=0)
    means = (gamma.T @ x) / nk[:, None]
    covs = np.empty((len(nk), x.shape[1], x.shape[1]))
    for k in range(len(nk)):
        diff = x - means[k]
        covs[k] = (gamma[:, k, None] * diff).T @ diff / nk[k]
    return nk / x.shape[0], means, covs


def fit_em(data: Dataset, K: int, tau: int, hard: bool = False, seed=None,
           init: MixtureModel | None = None, n_init: int = 10) -> tuple[MixtureModel, FitTrace]:
    """Non-private EM (soft) or hard EM baseline.

    Without ``init`` the start is k-means++ seeded from the data, repeated
    ``n_init`` times; the run with the highest final log-likelihood is kept.
    A component that ends up with no members is reseeded at the
    worst-explained row.
    """
    _check_inputs(data, K)
    if init is not None:
        return _em_run(data.rows, K, tau, hard, init, seed)
    if len(np.unique(data.rows, axis=0)) < K:
        raise DegenerateFitError(f"fewer than K={K} distinct rows; cannot fit")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        start = init_kmeanspp(data.rows, K, rng)
        model, trace = _em_run(data.rows, K, tau, hard, start, seed)
        if best is None or trace.log_likelihood[-1] > best[1].log_likelihood[-1]:
            best = (model, trace)
    return best


def _em_run(x, K, tau, hard, model, seed):
    n = x.shape[0]
    trace = FitTrace("em_hard" if hard else "em_soft", seed=seed)
    for _ in range(tau):
        comp = model.component_log_densities(x)
        trace.log_likelihood.append(float(np.logaddexp.reduce(comp, axis=1).sum()))
        if hard:
            labels = np.argmax(comp, axis=1)
            gamma = np.zeros((n, K))
            gamma[np.arange(n), labels] = 1.0
        else:
            gamma = np.exp(comp - np.logaddexp.reduce(comp, axis=1, keepdims=True))
        sizes = gamma.sum(axis=0)
        trace.sizes.append(np.round(sizes, 12).tolist())
        empty = np.flatnonzero(sizes <= 0)
        if empty.size:
            gamma = _reseed(x, comp, gamma, empty)
            trace.reseeded += empty.size
        weights, means, covs = _m_step(x, gamma)
        model, log = repair_model(weights, means, covs, unit_box=True)
        trace.repairs.add(log)
    trace.log_likelihood.append(float(model.log_density(x).sum()))
    return model, trace


def _reseed(x, comp, gamma, empty):
    rows = iter(np.argsort(np.logaddexp.reduce(comp, axis=1), kind="stable"))
    gamma = gamma.copy()
    for k in empty:
        for row in rows:
            donor = np.argmax(gamma[row])
            if gamma[:, donor].sum() > 1:
                break
        else:
            raise DegenerateFitError("cannot repopulate an empty component")
        gamma[row] = 0.0
        gamma[row, k] = 1.0
    return gamma


def fit_lloyd(data: Dataset, K: int, tau: int, seed=None, init_means=None) -> tuple[MixtureModel, FitTrace]:
    """Non-private Lloyd iterations plus per-cluster sample covariance."""
    _check_inputs(data, K)
    x = data.rows
    rng = np.random.default_rng(seed)
    centers = (rng.uniform(-1.0, 1.0, size=(K, data.d)) if init_means is None
               else np.array(init_means, dtype=float))
    trace = FitTrace("lloyd", seed=seed)
    for _ in range(tau):
        labels = nearest_center(x, centers)
        sizes = np.bincount(labels, minlength=K)
        trace.sizes.append(sizes.tolist())
        new = centers.copy()
        for k in range(K):
            if sizes[k]:
                new[k] = x[labels == k].mean(axis=0)
        centers = np.clip(new, -1.0, 1.0)
    sizes = np.maximum(np.bincount(labels, minlength=K), WEIGHT_FLOOR * data.n)
    covs = np.empty((K, data.d, data.d))
    for k in range(K):
        diff = x[labels == k] - centers[k]
        covs[k] = diff.T @ diff / sizes[k]
    model, log = repair_model(sizes / data.n, centers, covs, unit_box=True)
    trace.repairs.add(log)
    return model, trace
