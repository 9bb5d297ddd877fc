"""Maximum-likelihood Gaussian mixtures fitted by EM, with AIC model selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .config import FitConfig
from .errors import ContractViolation, InsufficientDataError
from .gaussian import (
    DIAGONAL,
    FULL,
    Covariance,
    GaussianComponent,
    factorize,
    log_density_factored,
    log_sum_exp,
)

log = logging.getLogger(__name__)

# A run that keeps re-initializing dead components is abandoned after this many events.
MAX_REINITS = 10


def as_data(data, dim=None) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ContractViolation(f"expected an (n, S) array of feature vectors, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ContractViolation(f"dimension mismatch: data has S={X.shape[1]}, model expects S={dim}")
    if not np.all(np.isfinite(X)):
        raise ContractViolation("feature vectors must be finite")
    return X


def mixture_log_likelihood(X, log_weights, means, factors, kind):
    """Per-row log sum_j w_j N(x | mu_j, Sigma_j) from precomputed factors."""
    comp = np.empty((X.shape[0], len(log_weights)))
    for j, (lw, mu, fac) in enumerate(zip(log_weights, means, factors)):
        comp[:, j] = lw + log_density_factored(X, mu, kind, fac)
    return log_sum_exp(comp, axis=1), comp


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: tuple
    covariance_kind: str = FULL
    fit_log: tuple = ()
    seed: int = 0
    converged: bool = False
    n_iter: int = 0
    reinit_iters: tuple = ()
    abandoned: bool = False
    aic: float | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        mu = np.array(self.means, dtype=float)
        if w.ndim != 1 or len(w) < 1 or mu.shape[0] != len(w) or len(self.covariances) != len(w):
            raise ContractViolation("weights, means and covariances must have one entry per component")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ContractViolation(f"mixture weights sum to {w.sum()!r}, expected 1")
        for a in (w, mu):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", tuple(self.covariances))
        object.__setattr__(self, "fit_log", tuple(float(v) for v in self.fit_log))
        object.__setattr__(self, "reinit_iters", tuple(int(v) for v in self.reinit_iters))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self):
        return [GaussianComponent(float(w), m, c) for w, m, c in zip(self.weights, self.means, self.covariances)]

    @cached_property
    def _factors(self):
        return [factorize(c, eps=0.0, name=j)[1] for j, c in enumerate(self.covariances)]

    def log_likelihood(self, X) -> np.ndarray:
        X = as_data(X, self.dim)
        ll, _ = mixture_log_likelihood(X, np.log(self.weights), self.means, self._factors, self.covariance_kind)
        return ll

    def trace_segments(self):
        """Split ``fit_log`` at component re-initializations.

        EM guarantees a non-decreasing likelihood only between two
        re-initializations of a dead component.
        """
        cuts = [0, *self.reinit_iters, len(self.fit_log)]
        return [self.fit_log[a:b] for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def gmm_log_likelihood(x, model: GmmModel):
    x = np.asarray(x, dtype=float)
    ll = model.log_likelihood(x)
    return float(ll[0]) if x.ndim == 1 else ll


def n_free_params(C, S, kind=FULL) -> int:
    cov = S if kind == DIAGONAL else S * (S + 1) // 2
    return (C - 1) + C * S + C * cov


def min_support(S, kind=FULL) -> int:
    """Points a component needs for a nonsingular covariance estimate."""
    return S + 1 if kind == FULL else 2


def max_supported_components(n, S, kind=FULL) -> int:
    return max(1, n // min_support(S, kind))


def kmeanspp_seeds(X, C, rng) -> np.ndarray:
    """k-means++ seeding: indices of C rows of X (repeats allowed only if X has fewer distinct rows)."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(idx)


def global_covariance(X, kind, eps) -> Covariance:
    diff = X - X.mean(axis=0)
    if kind == DIAGONAL:
        return Covariance(DIAGONAL, np.mean(diff**2, axis=0) + eps, eps)
    cov = diff.T @ diff / X.shape[0]
    cov = 0.5 * (cov + cov.T)
    return Covariance(FULL, cov + eps * np.eye(X.shape[1]), eps)


def _m_step_covariance(X, resp_k, mean, nk, kind):
    diff = X - mean
    if kind == DIAGONAL:
        return Covariance(DIAGONAL, resp_k @ (diff**2) / nk)
    cov = (resp_k[:, None] * diff).T @ diff / nk
    return Covariance(FULL, 0.5 * (cov + cov.T))


def _em_run(X, C, cfg: FitConfig, rng):
    n, S = X.shape
    kind = cfg.covariance_kind
    init_cov = global_covariance(X, kind, cfg.reg_eps)
    means = X[kmeanspp_seeds(X, C, rng)].copy()
    weights = np.full(C, 1.0 / C)
    covs = [init_cov] * C
    factors = [factorize(c, cfg.reg_eps, name=j)[1] for j, c in enumerate(covs)]
    support = min_support(S, kind)
    if n < C * support:
        # Too few points for C nonsingular components; only guard against empty ones.
        support = 0.5 * n / C
    trace, reinits = [], []
    converged = abandoned = False
    n_iter = 0
    for it in range(cfg.max_iters + 1):
        ll, comp = mixture_log_likelihood(X, np.log(weights), means, factors, kind)
        mean_ll = float(np.mean(ll))
        trace.append(mean_ll)
        if len(trace) > 1 and (not reinits or reinits[-1] < len(trace) - 1):
            prev = trace[-2]
            if abs(mean_ll - prev) <= cfg.rel_tol * abs(prev):
                converged = True
                break
        if it == cfg.max_iters or abandoned:
            break
        n_iter += 1
        resp = np.exp(comp - ll[:, None])
        nk = resp.sum(axis=0)
        dead = np.flatnonzero((nk / n < 1.0 / (10 * n)) | (nk < support))
        new_means = np.empty_like(means)
        new_covs = [None] * C
        for k in range(C):
            if k in dead:
                continue
            new_means[k] = resp[:, k] @ X / nk[k]
            new_covs[k] = _m_step_covariance(X, resp[:, k], new_means[k], nk[k], kind)
        if len(dead):
            worst = np.argsort(ll, kind="stable")
            for rank, k in enumerate(dead):
                new_means[k] = X[worst[rank % n]]
                new_covs[k] = init_cov
                nk[k] = 1.0
            reinits.append(len(trace))
            log.debug("EM: re-initialized components %s at iteration %d", list(dead), it)
            if len(reinits) > MAX_REINITS:
                abandoned = True
        weights = nk / nk.sum()
        means = new_means
        covs, factors = [], []
        for k, c in enumerate(new_covs):
            c, f = factorize(c, cfg.reg_eps, name=k)
            covs.append(c)
            factors.append(f)
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        covariance_kind=kind,
        fit_log=trace,
        seed=cfg.seed,
        converged=converged,
        n_iter=n_iter,
        reinit_iters=reinits,
        abandoned=abandoned,
    )


def fit_em(data, C: int, cfg: FitConfig = FitConfig()) -> GmmModel:
    """Fit a C-component mixture by EM; best of ``cfg.n_restarts`` seeded restarts.

    Abandoned runs (see ``MAX_REINITS``) only win if every restart was abandoned.
    """
    X = as_data(data)
    if C < 1:
        raise ContractViolation("C must be >= 1")
    if X.shape[0] < C:
        raise InsufficientDataError(f"need at least C={C} samples, got {X.shape[0]}")
    best = None
    for r in range(cfg.n_restarts):
        rng = np.random.default_rng([cfg.seed, C, r])
        model = _em_run(X, C, cfg, rng)
        if best is None or (not model.abandoned, model.fit_log[-1]) > (not best.abandoned, best.fit_log[-1]):
            best = model
    return best


def aic_score(model: GmmModel, data) -> float:
    X = as_data(data, model.dim)
    if X.shape[0] == 0:
        raise ContractViolation("AIC needs at least one sample")
    k = n_free_params(model.n_components, model.dim, model.covariance_kind)
    return float(2 * k - 2 * np.sum(model.log_likelihood(X)))


def select_by_aic(data, cfg: FitConfig = FitConfig(), return_sweep=False):
    """Fit C = 1..C_hi and keep the lowest AIC (ties -> smaller C).

    C_hi is ``cfg.max_components`` capped by the number of components the data
    can support with nonsingular covariances (n >= C * min_support).
    """
    X = as_data(data)
    n, S = X.shape
    c_hi = min(cfg.max_components, n, max_supported_components(n, S, cfg.covariance_kind))
    best, best_aic, sweep = None, np.inf, []
    for C in range(1, c_hi + 1):
        model = fit_em(X, C, cfg)
        score = aic_score(model, X)
        sweep.append(score)
        if score < best_aic:
            best, best_aic = model, score
    best = replace(best, aic=best_aic)
    return (best, sweep) if return_sweep else best
