"""Variational Bayesian Gaussian mixtures.

Dirichlet prior on the weights and a Normal-Wishart prior on each
component's (mean, precision). For the diagonal kind the precision is
factorized into S independent one-dimensional Wisharts (Normal-Gamma per
dimension), so every formula below is written per Wishart block of size
``b`` (b = S for full, b = 1 for diagonal) and summed over blocks.

Coordinate ascent alternates the posterior-parameter update and the
responsibility update; the evidence lower bound is evaluated between the
two, so its trace is monotone. After convergence, pairs of components are
tentatively merged and a merge is kept only if it raises the bound.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import digamma, gammaln

from .config import FitConfig
from .errors import ContractViolation, SingularCovarianceError
from .gaussian import (
    COVARIANCE_KINDS,
    DIAGONAL,
    FULL,
    LOG_2PI,
    Covariance,
    factorize,
    log_density_factored,
    log_sum_exp,
)
from .gmm import as_data, global_covariance, kmeanspp_seeds, mixture_log_likelihood

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BgmmPriors:
    alpha0: float
    m0: np.ndarray
    beta0: float
    nu0: float
    W0: np.ndarray

    def __post_init__(self):
        m0 = np.array(self.m0, dtype=float)
        W0 = np.array(self.W0, dtype=float)
        S = m0.shape[0]
        if m0.ndim != 1 or W0.shape != (S, S):
            raise ContractViolation("m0 must be a vector and W0 a matching square matrix")
        if not self.alpha0 > 0:
            raise ContractViolation("alpha0 must be > 0")
        if not self.beta0 > 0:
            raise ContractViolation("beta0 must be > 0")
        if self.nu0 < S:
            raise ContractViolation(f"nu0 must be >= S={S}")
        if not np.allclose(W0, W0.T):
            raise ContractViolation("W0 must be symmetric")
        try:
            np.linalg.cholesky(W0)
        except np.linalg.LinAlgError:
            raise ContractViolation("W0 must be positive definite") from None
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "W0", W0)

    @property
    def dim(self):
        return self.m0.shape[0]

    @classmethod
    def default(cls, data, C_max):
        """alpha0 = 1/C_max, m0 = data mean, beta0 = 1, nu0 = S,
        W0 = I / (mean per-dimension variance)."""
        X = as_data(data)
        S = X.shape[1]
        var = float(np.mean(X.var(axis=0)))
        if not var > 0:
            var = 1.0
        return cls(1.0 / C_max, X.mean(axis=0), 1.0, float(S), np.eye(S) / var)

    def to_dict(self):
        return {
            "alpha0": self.alpha0,
            "m0": self.m0.tolist(),
            "beta0": self.beta0,
            "nu0": self.nu0,
            "W0": self.W0.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        m0 = np.array(d["m0"], dtype=float)
        S = m0.shape[0]
        return cls(d["alpha0"], m0, d["beta0"], d["nu0"], np.array(d["W0"], dtype=float).reshape(S, S))


def _block(kind, S):
    return S if kind == FULL else 1


@dataclass(frozen=True)
class BgmmModel:
    """Posterior q(pi) q(mu, Lambda) of a fitted variational mixture.

    ``W_inv`` holds the inverse Wishart scales: (K, S, S) for the full kind,
    (K, S) per-dimension values for the diagonal kind.
    """

    alpha: np.ndarray
    beta: np.ndarray
    means: np.ndarray
    nu: np.ndarray
    W_inv: np.ndarray
    priors: BgmmPriors = field(repr=False)
    covariance_kind: str = FULL
    elbo_log: tuple = ()
    seed: int = 0
    converged: bool = False
    n_iter: int = 0
    n_merges: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "means", "nu", "W_inv"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "elbo_log", tuple(float(v) for v in self.elbo_log))
        K = len(self.alpha)
        if not (len(self.beta) == len(self.nu) == self.means.shape[0] == self.W_inv.shape[0] == K):
            raise ContractViolation("posterior arrays disagree on the number of components")
        if self.covariance_kind not in COVARIANCE_KINDS:
            raise ContractViolation(f"unknown covariance kind {self.covariance_kind!r}")

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def c_max(self):
        return len(self.alpha)

    @property
    def expected_weights(self):
        return self.alpha / self.alpha.sum()

    @property
    def counts(self):
        """Responsibility mass per component (posterior alpha minus the prior)."""
        return np.maximum(self.alpha - self.priors.alpha0, 0.0)

    @property
    def active(self):
        counts = self.counts
        return counts / counts.sum() >= 1.0 / (10 * self.c_max)

    @property
    def effective_components(self) -> int:
        return int(np.sum(self.active))

    @property
    def fit_log(self):
        return self.elbo_log

    def expected_covariances(self):
        b = _block(self.covariance_kind, self.dim)
        out = []
        for nu, Winv in zip(self.nu, self.W_inv):
            denom = nu - b - 1 if nu > b + 1 else nu
            if self.covariance_kind == FULL:
                out.append(Covariance(FULL, 0.5 * (Winv + Winv.T) / denom))
            else:
                out.append(Covariance(DIAGONAL, Winv / denom))
        return out

    def plugin_mixture(self):
        """(log expected weights, means, covariances) of the active components."""
        idx = np.flatnonzero(self.active)
        covs = self.expected_covariances()
        return np.log(self.expected_weights[idx]), self.means[idx], [covs[k] for k in idx]

    @cached_property
    def _plugin(self):
        lw, mu, covs = self.plugin_mixture()
        return lw, mu, [factorize(c, eps=0.0, name=j)[1] for j, c in enumerate(covs)]

    def log_likelihood(self, X) -> np.ndarray:
        X = as_data(X, self.dim)
        lw, mu, factors = self._plugin
        ll, _ = mixture_log_likelihood(X, lw, mu, factors, self.covariance_kind)
        return ll


def bgmm_log_likelihood(x, model: BgmmModel):
    x = np.asarray(x, dtype=float)
    ll = model.log_likelihood(x)
    return float(ll[0]) if x.ndim == 1 else ll


def _log_wishart_norm(logdet_W, nu, b, n_blocks):
    """Sum over ``n_blocks`` blocks of ln B(W, nu) for b x b Wisharts, given the summed ln|W|."""
    i = np.arange(1, b + 1)
    per_block = -0.5 * nu * b * np.log(2.0) - 0.25 * b * (b - 1) * np.log(np.pi) - np.sum(
        gammaln(0.5 * (nu + 1 - i))
    )
    return -0.5 * nu * logdet_W + n_blocks * per_block


def _log_dirichlet_norm(alpha):
    return gammaln(np.sum(alpha)) - np.sum(gammaln(alpha))


class _State:
    """Posterior parameters given responsibilities, plus derived expectations."""

    def __init__(self, X, r, pr: BgmmPriors, kind):
        n, S = X.shape
        K = r.shape[1]
        self.kind = kind
        self.b = _block(kind, S)
        self.n_blocks = S // self.b
        self.Nk = r.sum(axis=0)
        self.alpha = pr.alpha0 + self.Nk
        self.beta = pr.beta0 + self.Nk
        self.nu = pr.nu0 + self.Nk
        self.means = (pr.beta0 * pr.m0 + r.T @ X) / self.beta[:, None]
        if kind == FULL:
            W0_inv = np.linalg.inv(pr.W0)
            self.W0_inv = 0.5 * (W0_inv + W0_inv.T)
            self.W_inv = np.empty((K, S, S))
            self.chol = np.empty((K, S, S))
            self.q = np.empty((n, K))
            for k in range(K):
                d = X - self.means[k]
                dm = pr.m0 - self.means[k]
                Wi = self.W0_inv + (r[:, k, None] * d).T @ d + pr.beta0 * np.outer(dm, dm)
                Wi = 0.5 * (Wi + Wi.T)
                try:
                    self.chol[k] = np.linalg.cholesky(Wi)
                except np.linalg.LinAlgError:
                    raise SingularCovarianceError(
                        "Wishart scale lost positive definiteness", component=k
                    ) from None
                self.W_inv[k] = Wi
                z = solve_triangular(self.chol[k], d.T, lower=True, check_finite=False)
                self.q[:, k] = np.sum(z * z, axis=0)
            self.logdet_W = -2.0 * np.sum(np.log(np.diagonal(self.chol, axis1=1, axis2=2)), axis=1)
        else:
            self.W0_inv = 1.0 / np.diag(pr.W0)
            dm = pr.m0 - self.means
            self.W_inv = np.empty((K, S))
            self.q = np.empty((n, K))
            for k in range(K):
                d2 = (X - self.means[k]) ** 2
                self.W_inv[k] = self.W0_inv + r[:, k] @ d2 + pr.beta0 * dm[k] ** 2
                self.q[:, k] = d2 @ (1.0 / self.W_inv[k])
            if not np.all(self.W_inv > 0):
                raise SingularCovarianceError("Gamma scale lost positivity")
            self.logdet_W = -np.sum(np.log(self.W_inv), axis=1)
        i = np.arange(1, self.b + 1)
        self.E_logdet_L = (
            self.n_blocks * (np.sum(digamma(0.5 * (self.nu[:, None] + 1 - i)), axis=1) + self.b * np.log(2.0))
            + self.logdet_W
        )
        self.E_log_pi = digamma(self.alpha) - digamma(np.sum(self.alpha))

    def log_rho(self):
        S = self.b * self.n_blocks
        return (
            self.E_log_pi
            + 0.5 * self.E_logdet_L
            - 0.5 * S * LOG_2PI
            - 0.5 * (S / self.beta + self.nu * self.q)
        )

    def _prior_quadratics(self, pr):
        """(m_k - m0)^T W_k (m_k - m0) and Tr(W0^-1 W_k) for every component."""
        dm = self.means - pr.m0
        K = len(self.alpha)
        if self.kind == DIAGONAL:
            inv = 1.0 / self.W_inv
            return np.sum(dm**2 * inv, axis=1), inv @ self.W0_inv
        quad, tr = np.empty(K), np.empty(K)
        for k in range(K):
            z = solve_triangular(self.chol[k], dm[k], lower=True, check_finite=False)
            quad[k] = z @ z
            tr[k] = np.trace(cho_solve((self.chol[k], True), self.W0_inv))
        return quad, tr

    def elbo(self, r, log_r, pr: BgmmPriors):
        b, nb = self.b, self.n_blocks
        S = b * nb
        K = len(self.alpha)
        Nk, nu, beta, Elog_L = self.Nk, self.nu, self.beta, self.E_logdet_L
        e_lik = 0.5 * np.sum(Nk * (Elog_L - S / beta - S * LOG_2PI) - nu * np.sum(r * self.q, axis=0))
        e_z = np.sum(Nk * self.E_log_pi)
        e_pi = _log_dirichlet_norm(np.full(K, pr.alpha0)) + (pr.alpha0 - 1) * np.sum(self.E_log_pi)
        quad_m, tr_W0inv_W = self._prior_quadratics(pr)
        if self.kind == DIAGONAL:
            logdet_W0 = -float(np.sum(np.log(self.W0_inv)))
        else:
            logdet_W0 = float(np.linalg.slogdet(pr.W0)[1])
        e_mu_lam = (
            0.5 * np.sum(S * np.log(pr.beta0 / (2 * np.pi)) + Elog_L - S * pr.beta0 / beta - pr.beta0 * nu * quad_m)
            + K * _log_wishart_norm(logdet_W0, pr.nu0, b, nb)
            + 0.5 * (pr.nu0 - b - 1) * np.sum(Elog_L)
            - 0.5 * np.sum(nu * tr_W0inv_W)
        )
        with np.errstate(invalid="ignore"):
            h_z = -np.sum(np.where(r > 0, r * log_r, 0.0))
        h_pi = -(np.sum((self.alpha - 1) * self.E_log_pi) + _log_dirichlet_norm(self.alpha))
        h_lam = np.array(
            [
                -_log_wishart_norm(self.logdet_W[k], nu[k], b, nb) - 0.5 * (nu[k] - b - 1) * Elog_L[k] + 0.5 * nu[k] * S
                for k in range(K)
            ]
        )
        h_mu_lam = -np.sum(0.5 * Elog_L + 0.5 * S * np.log(beta / (2 * np.pi)) - 0.5 * S - h_lam)
        return float(e_lik + e_z + e_pi + e_mu_lam + h_z + h_pi + h_mu_lam)


def _e_step(state):
    log_rho = state.log_rho()
    log_r = log_rho - log_sum_exp(log_rho, axis=1)[:, None]
    return np.exp(log_r), log_r


def _cavi(X, state, priors, cfg, trace):
    """Alternate responsibility and posterior updates until the ELBO settles."""
    for it in range(cfg.max_iters):
        r, log_r = _e_step(state)
        state = _State(X, r, priors, state.kind)
        trace.append(state.elbo(r, log_r, priors))
        if abs(trace[-1] - trace[-2]) <= cfg.rel_tol * abs(trace[-2]):
            return r, log_r, state, True, it + 1
    return r, log_r, state, False, cfg.max_iters


def _best_merge(X, r, log_r, priors, kind, current):
    """Fold each pair of occupied components into one; return the best
    (r, log_r, state, elbo) if it beats ``current``, else None."""
    occupied = np.flatnonzero(r.sum(axis=0) > 1e-3)
    best = None
    for i, a in enumerate(occupied):
        for b in occupied[i + 1 :]:
            lr = log_r.copy()
            lr[:, a] = np.logaddexp(log_r[:, a], log_r[:, b])
            lr[:, b] = -np.inf
            rr = np.exp(lr)
            st = _State(X, rr, priors, kind)
            elbo = st.elbo(rr, lr, priors)
            if elbo > current and (best is None or elbo > best[3]):
                best = (rr, lr, st, elbo)
    return best


def _vb_run(X, C_max, priors, cfg, rng):
    kind = cfg.covariance_kind
    # Same start as EM: k-means++ means, uniform weights, global covariance.
    seeds = X[kmeanspp_seeds(X, C_max, rng)]
    _, factor = factorize(global_covariance(X, kind, cfg.reg_eps), cfg.reg_eps)
    log_r = np.stack([log_density_factored(X, mu, kind, factor) for mu in seeds], axis=1)
    log_r -= log_sum_exp(log_r, axis=1)[:, None]
    r = np.exp(log_r)
    state = _State(X, r, priors, kind)
    trace = [state.elbo(r, log_r, priors)]
    n_iter, n_merges = 0, 0
    while True:
        r, log_r, state, converged, used = _cavi(X, state, priors, cfg, trace)
        n_iter += used
        merged = _best_merge(X, r, log_r, priors, kind, trace[-1])
        if merged is None:
            break
        r, log_r, state, elbo = merged
        trace.append(elbo)
        n_merges += 1
    return BgmmModel(
        alpha=state.alpha,
        beta=state.beta,
        means=state.means,
        nu=state.nu,
        W_inv=state.W_inv,
        priors=priors,
        covariance_kind=kind,
        elbo_log=trace,
        seed=cfg.seed,
        converged=converged,
        n_iter=n_iter,
        n_merges=n_merges,
    )


def fit_vb(data, C_max: int, priors: BgmmPriors | None = None, cfg: FitConfig = FitConfig()) -> BgmmModel:
    """Variational fit with at most ``C_max`` components; best ELBO of
    ``cfg.n_restarts`` seeded starts."""
    X = as_data(data)
    if C_max < 1:
        raise ContractViolation("C_max must be >= 1")
    if priors is None:
        priors = BgmmPriors.default(X, C_max)
    if priors.dim != X.shape[1]:
        raise ContractViolation(f"priors have S={priors.dim}, data has S={X.shape[1]}")
    best = None
    for rep in range(cfg.n_restarts):
        rng = np.random.default_rng([cfg.seed, C_max, rep])
        model = _vb_run(X, C_max, priors, cfg, rng)
        if best is None or model.elbo_log[-1] > best.elbo_log[-1]:
            best = model
    log.debug("VB fit: %d effective of %d (%d merges)", best.effective_components, C_max, best.n_merges)
    return best
