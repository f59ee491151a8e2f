"""Gradient dynamics on a Gaussian-mixture density.

The Morse function is f = -ln p, so density modes are the stable equilibria
(index 0) of the ascent flow dx/dt = grad ln p(x), and saddles between two
modes are index-1 points of f. The metric is the identity unless a fixed
SPD ``metric`` is passed; equilibrium locations and indices do not depend on
it, only the trajectories do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LOG_2PI, MixtureModel

GRAD_TOL = 1e-8
HESS_TOL = 1e-8
FLOW_STEP = 0.05
FLOW_MAX_ITER = 5000
ARMIJO = 1e-4
MIN_STEP = 1e-14
MAX_DISPLACEMENT = 0.01
CURVATURE = 0.5
IMPLICIT_MAX_STEP = 1e4


class Landscape:
    """Density, gradient and Hessian of ln p for a fixed mixture."""

    def __init__(self, model: MixtureModel):
        self.model = model

    @property
    def D(self) -> int:
        return self.model.D

    def _terms(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = self.model
        diff = x[:, None, :] - m.means[None, :, :]
        # P_k d_k as a sum over columns; much faster than matmul for small D
        pd = sum(m.precisions[None, :, :, j] * diff[:, :, None, j] for j in range(m.D))
        maha = np.einsum("nki,nki->nk", diff, pd)
        comp = np.log(m.weights) - 0.5 * (m.D * LOG_2PI + m.logdets) - 0.5 * maha
        logp = np.logaddexp.reduce(comp, axis=1)
        w = np.exp(comp - logp[:, None])
        return logp, w, pd

    def log_density(self, x):
        """ln p at each row of ``x`` (scalar for a single point)."""
        x = np.asarray(x, dtype=float)
        out = self.model.log_density(x)
        return float(out[0]) if x.ndim == 1 else out

    def weights_at(self, x):
        x = np.asarray(x, dtype=float)
        w = self.model.responsibilities(x)
        return w[0] if x.ndim == 1 else w

    def value_and_grad(self, x):
        """Batched (ln p, grad ln p) for an (n, D) array."""
        logp, w, pd = self._terms(x)
        grad = -(w[:, None, :] @ pd)[:, 0, :]
        return logp, grad

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = self.value_and_grad(x)[1]
        return g[0] if x.ndim == 1 else g

    def hessians(self, x) -> np.ndarray:
        """Batched analytic Hessian of ln p, shape (n, D, D).

        sum_k w_k [P_k d_k d_k^T P_k - P_k] - g g^T with d_k = x - mu_k,
        P_k the precision and g the gradient.
        """
        _, w, pd = self._terms(x)
        g = -(w[:, None, :] @ pd)[:, 0, :]
        K, D = self.model.precisions.shape[:2]
        h = np.swapaxes(w[:, :, None] * pd, 1, 2) @ pd - (w @ self.model.precisions.reshape(K, D * D)).reshape(-1, D, D)
        h -= g[:, :, None] * g[:, None, :]
        return 0.5 * (h + np.swapaxes(h, 1, 2))

    def hessian(self, x) -> np.ndarray:
        """Analytic Hessian of ln p at a single point."""
        return self.hessians(np.asarray(x, dtype=float)[None, :])[0]


def log_density(L: Landscape, x) -> float:
    return L.log_density(x)


def grad_log_density(L: Landscape, x) -> np.ndarray:
    return L.grad(x)


def mixture_weights_at(L: Landscape, x) -> np.ndarray:
    return L.weights_at(x)


def hessian_log_density(L: Landscape, x) -> np.ndarray:
    return L.hessian(x)


@dataclass
class FlowResult:
    endpoints: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    grad_norms: np.ndarray
    max_norms: np.ndarray
    path: list | None = None
    path_logp: list | None = None


def flow_ascend_batch(L: Landscape, x0, step: float = FLOW_STEP, grad_tol: float = GRAD_TOL,
                      max_iter: int = FLOW_MAX_ITER, metric=None, record_path: bool = False,
                      max_disp: float = MAX_DISPLACEMENT, scheme: str = "implicit",
                      capture=None, capture_radius: float = 1e-3) -> FlowResult:
    """Integrate the ascent flow dx/dt = grad ln p for many starting points at once.

    ``scheme="euler"`` takes forward-Euler steps h * g. The default
    ``"implicit"`` is linearly implicit Euler on the concave part of ln p:
    with Hess ln p = V diag(lam) V^T the step is V diag(h / (1 + h k)) V^T g,
    k = max(-lam, 0). It follows the same trajectories to first order but
    stays stable on the very stiff ridges that near-singular covariances
    produce, where forward Euler needs millions of steps. A fixed ``metric``
    forces forward Euler with direction R^-1 g.

    Every iteration takes one accepted step per unconverged point. A trial
    step is halved until it passes an Armijo sufficient-increase test, so
    ln p never decreases along accepted steps, and a curvature test that
    rejects steps overshooting the valley floor by too much. Once the change
    in ln p drops below floating-point resolution of ln p itself, the
    increase is measured by the trapezoid rule on the gradient instead. The
    next iteration starts from twice the last accepted step (capped at
    ``step`` for forward Euler). Each step moves a point at most
    ``max_disp``; without that cap a long step can leap into a different,
    denser basin and still pass the increase test.

    ``capture`` lists known modes: a point that comes within
    ``capture_radius`` of one stops there and counts as converged. This only
    saves work when many points flow into the same few modes.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if scheme not in ("implicit", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    x = np.array(np.atleast_2d(x0), dtype=float)
    n = x.shape[0]
    rinv = None if metric is None else np.linalg.inv(np.asarray(metric, dtype=float))
    implicit = scheme == "implicit" and rinv is None
    h_cap = IMPLICIT_MAX_STEP if implicit else step
    lp, g = L.value_and_grad(x)
    gnorm = np.linalg.norm(g, axis=1)
    converged = gnorm <= grad_tol
    modes = None if capture is None else np.atleast_2d(np.asarray(capture, dtype=float))
    stalled = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    h = np.full(n, float(step))
    max_norm = np.linalg.norm(x, axis=1)
    path = [x[0].copy()] if record_path else None
    path_lp = [float(lp[0])] if record_path else None

    for _ in range(max_iter):
        idx = np.flatnonzero(~(converged | stalled))
        if idx.size == 0:
            break
        if implicit:
            lam, vecs = np.linalg.eigh(L.hessians(x[idx]))
            kappa = np.maximum(-lam, 0.0)
            coef = np.einsum("nij,ni->nj", vecs, g[idx])
        else:
            d = g[idx] if rinv is None else g[idx] @ rinv.T
        ht = np.where(iters[idx] > 0, np.minimum(h_cap, 2.0 * h[idx]), step)
        pending = np.arange(idx.size)
        while pending.size:
            sel = idx[pending]
            if implicit:
                scale = ht[pending, None] / (1.0 + ht[pending, None] * kappa[pending])
                sv = np.einsum("nij,nj->ni", vecs[pending], scale * coef[pending])
            else:
                sv = ht[pending, None] * d[pending]
            norm = np.linalg.norm(sv, axis=1)
            sv *= np.minimum(1.0, max_disp / np.maximum(norm, 1e-300))[:, None]
            trial = x[sel] + sv
            lpt, gt = L.value_and_grad(trial)
            slope = np.einsum("ni,ni->n", g[sel], sv)
            need = ARMIJO * slope
            direct = lpt - lp[sel]
            resolved = np.abs(direct) > 1e-10 * (1.0 + np.abs(lp[sel]))
            new_slope = np.einsum("ni,ni->n", gt, sv)
            trap = 0.5 * (slope + new_slope)
            ok = np.where(resolved, direct >= need, (trap >= need) & (direct >= -1e-10 * (1.0 + np.abs(lp[sel]))))
            # Curvature test: stepping far past the valley floor makes the
            # iterate zigzag across a stiff direction without progress.
            ok &= new_slope >= -CURVATURE * slope
            acc = sel[ok]
            x[acc] = trial[ok]
            lp[acc] = lpt[ok]
            g[acc] = gt[ok]
            h[acc] = ht[pending][ok]
            iters[acc] += 1
            rej = pending[~ok]
            ht[rej] *= 0.5
            tiny = ht[rej] < MIN_STEP
            stalled[idx[rej[tiny]]] = True
            pending = rej[~tiny]
        gnorm[idx] = np.linalg.norm(g[idx], axis=1)
        converged[idx] = gnorm[idx] <= grad_tol
        if modes is not None and modes.size:
            near = np.linalg.norm(x[idx, None, :] - modes[None], axis=2).min(axis=1) <= capture_radius
            converged[idx[near]] = True
        max_norm[idx] = np.maximum(max_norm[idx], np.linalg.norm(x[idx], axis=1))
        if record_path and iters[0] > len(path) - 1:
            path.append(x[0].copy())
            path_lp.append(float(lp[0]))
    return FlowResult(x, converged, iters, gnorm, max_norm, path, path_lp)


def flow_ascend(L: Landscape, x0, step: float = FLOW_STEP, grad_tol: float = GRAD_TOL,
                max_iter: int = FLOW_MAX_ITER, metric=None, record_path: bool = False,
                max_disp: float = MAX_DISPLACEMENT, scheme: str = "implicit"):
    """Integrate the ascent flow from one point.

    Returns ``(endpoint, converged, n_steps)``; with ``record_path`` the
    accepted trajectory and its ln p values are appended.
    """
    res = flow_ascend_batch(L, np.asarray(x0, dtype=float)[None, :], step, grad_tol, max_iter,
                            metric, record_path, max_disp, scheme)
    out = (res.endpoints[0], bool(res.converged[0]), int(res.iterations[0]))
    if record_path:
        return out + (np.array(res.path), np.array(res.path_logp))
    return out


@dataclass
class CriticalPoint:
    location: np.ndarray
    index: int
    f_value: float
    gradient_norm: float
    converged: bool = True
    hyperbolic: bool = True
    eigenvalues: np.ndarray | None = None  # of H_f = -Hess ln p, ascending
    eigenvectors: np.ndarray | None = None
    iterations: int = 0

    @property
    def p_value(self) -> float:
        return float(np.exp(-self.f_value))

    def to_dict(self) -> dict:
        return {
            "location": np.asarray(self.location).tolist(),
            "index": self.index,
            "f_value": self.f_value,
            "p_value": self.p_value,
            "gradient_norm": self.gradient_norm,
        }


def classify(L: Landscape, x, grad_tol: float = GRAD_TOL, hess_tol: float = HESS_TOL,
             converged: bool = True, iterations: int = 0) -> CriticalPoint:
    x = np.asarray(x, dtype=float)
    hf = -L.hessian(x)
    vals, vecs = np.linalg.eigh(hf)
    return CriticalPoint(
        location=x,
        index=int(np.sum(vals < 0)),
        f_value=-L.log_density(x),
        gradient_norm=float(np.linalg.norm(L.grad(x))),
        converged=converged,
        hyperbolic=bool(np.all(np.abs(vals) > hess_tol)),
        eigenvalues=vals,
        eigenvectors=vecs,
        iterations=iterations,
    )


def gentlest_ascent(L: Landscape, x0, tol: float = 1e-3, max_iter: int = 500, max_step: float = 0.01,
                    h: float = 1.0):
    """Drift toward an index-1 saddle of f = -ln p.

    Moves uphill in ln p along every Hessian eigendirection except the
    softest one, where it moves downhill. Near-degenerate shoulders that trap
    Newton's method are left along the ridge toward the saddle. Components
    that are locally stable are damped by 1 / (1 + h |mu|) as in linearly
    implicit Euler, so stiff directions settle in one step. Accepts one point
    or an (n, D) batch and returns the last iterates in the same shape.
    """
    x0 = np.asarray(x0, dtype=float)
    x = np.array(np.atleast_2d(x0))
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        g = L.value_and_grad(x[idx])[1]
        still = np.linalg.norm(g, axis=1) > tol
        active[idx[~still]] = False
        idx, g = idx[still], g[still]
        if idx.size == 0:
            break
        mu, vecs = np.linalg.eigh(-L.hessians(x[idx]))
        c = np.einsum("nij,ni->nj", vecs, g)
        c[:, 0] *= -1.0
        kappa = np.maximum(mu, 0.0)
        kappa[:, 0] = np.maximum(-mu[:, 0], 0.0)
        dx = np.einsum("nij,nj->ni", vecs, h * c / (1.0 + h * kappa))
        n = np.linalg.norm(dx, axis=1)
        dx *= np.minimum(1.0, max_step / np.maximum(n, 1e-300))[:, None]
        x[idx] += dx
    return x[0] if x0.ndim == 1 else x


def refine_critical(L: Landscape, x0, grad_tol: float = GRAD_TOL, max_iter: int = 100,
                    max_step: float = 0.1, metric=None) -> CriticalPoint:
    """Newton iteration on grad ln p = 0, then index classification.

    Hessian eigenvalues smaller in magnitude than 1e-6 times the largest are
    lifted to that size (keeping their sign) so near-singular steps stay
    bounded; steps are also capped at ``max_step``. A non-converged result
    has ``converged=False`` and carries the last iterate.
    """
    x = np.array(x0, dtype=float)
    rinv = None if metric is None else np.linalg.inv(np.asarray(metric, dtype=float))
    for it in range(max_iter + 1):
        g = L.grad(x)
        if rinv is not None:
            g = rinv @ g
        if np.linalg.norm(g) <= grad_tol:
            return classify(L, x, grad_tol, iterations=it)
        if it == max_iter:
            break
        h = L.hessian(x)
        if rinv is not None:
            h = rinv @ h
            dx = -np.linalg.lstsq(h, g, rcond=None)[0]
        else:
            vals, vecs = np.linalg.eigh(h)
            floor = 1e-6 * max(1.0, np.abs(vals).max())
            vals = np.where(np.abs(vals) < floor, np.where(vals < 0, -floor, floor), vals)
            dx = -vecs @ ((vecs.T @ g) / vals)
        norm = np.linalg.norm(dx)
        if norm > max_step:
            dx *= max_step / norm
        # The Newton direction descends |g|^2; backtrack until |g| shrinks.
        gn = np.linalg.norm(g)
        t = 1.0
        while t > 1e-6:
            gt = L.grad(x + t * dx)
            if rinv is not None:
                gt = rinv @ gt
            if np.linalg.norm(gt) < gn:
                break
            t *= 0.5
        x = x + t * dx
    cp = classify(L, x, grad_tol, converged=False, iterations=max_iter)
    return cp


@dataclass
class BasinAssignment:
    index: int
    low_confidence: bool
    boundary: bool
    converged: bool
    endpoint: np.ndarray


def _match(endpoints, centers, match_tol, tie_tol=1e-9):
    d = np.linalg.norm(endpoints[:, None, :] - centers[None, :, :], axis=2)
    idx = np.argmin(d, axis=1)
    best = d[np.arange(len(idx)), idx]
    second = np.partition(d, 1, axis=1)[:, 1] if centers.shape[0] > 1 else np.full(len(idx), np.inf)
    return idx, best > match_tol, (second - best) <= tie_tol


def assign_basins(L: Landscape, x, centers, match_tol: float = 0.1, **flow_kw) -> list[BasinAssignment]:
    """Flow every row uphill and label it by the center nearest its endpoint."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] == 0:
        raise ValueError("need at least one center")
    res = flow_ascend_batch(L, x, **flow_kw)
    idx, low, tie = _match(res.endpoints, centers, match_tol)
    return [BasinAssignment(int(i), bool(lo), bool(t), bool(c), e)
            for i, lo, t, c, e in zip(idx, low, tie, res.converged, res.endpoints)]


def assign_basin(L: Landscape, x, centers, match_tol: float = 0.1, **flow_kw) -> BasinAssignment:
    return assign_basins(L, np.asarray(x, dtype=float)[None, :], centers, match_tol, **flow_kw)[0]
