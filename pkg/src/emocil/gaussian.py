"""Multivariate normal log-densities and covariance helpers.

Everything stays in log space. Full covariances are only ever touched
through their Cholesky factor; no explicit inverse is formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolation, SingularCovarianceError

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_REG_EPS = 1e-6

DIAGONAL = "diagonal"
FULL = "full"
COVARIANCE_KINDS = (DIAGONAL, FULL)


@dataclass(frozen=True)
class Covariance:
    """A diagonal or full covariance.

    ``data`` holds the effective matrix (S variances for the diagonal kind,
    an S x S symmetric matrix for the full kind). ``reg`` records how much
    has been added to the diagonal by :func:`regularize` so far.
    """

    kind: str
    data: np.ndarray
    reg: float = 0.0

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ContractViolation(f"unknown covariance kind {self.kind!r}")
        data = np.array(self.data, dtype=float)
        if self.kind == DIAGONAL and data.ndim != 1:
            raise ContractViolation("diagonal covariance needs a 1-d array of variances")
        if self.kind == FULL:
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise ContractViolation(f"full covariance must be square, got shape {data.shape}")
            if not np.allclose(data, data.T, rtol=1e-10, atol=1e-12):
                raise ContractViolation("full covariance must be symmetric")
        if data.size == 0:
            raise ContractViolation("covariance dimension must be >= 1")
        if not np.all(np.isfinite(data)):
            raise ContractViolation("covariance entries must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def matrix(self) -> np.ndarray:
        return np.diag(self.data) if self.kind == DIAGONAL else self.data.copy()

    @classmethod
    def identity(cls, dim, kind=FULL):
        return cls(kind, np.ones(dim) if kind == DIAGONAL else np.eye(dim))


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: Covariance = field(repr=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise ContractViolation(f"component weight must be finite and positive, got {self.weight}")
        if mean.ndim != 1 or mean.shape[0] != self.covariance.dim:
            raise ContractViolation("mean dimension does not match covariance dimension")


def regularize(cov: Covariance, eps: float) -> Covariance:
    """Add ``eps`` to every diagonal entry of ``cov``."""
    if eps < 0:
        raise ContractViolation("regularization eps must be >= 0")
    if eps == 0:
        return cov
    if cov.kind == DIAGONAL:
        data = cov.data + eps
    else:
        data = cov.data + eps * np.eye(cov.dim)
    return Covariance(cov.kind, data, cov.reg + eps)


def _try_factor(cov):
    if cov.kind == DIAGONAL:
        if np.all(cov.data > 0):
            return np.sqrt(cov.data)
        return None
    try:
        factor = np.linalg.cholesky(cov.data)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.diag(factor) > 0):
        return None
    return factor


def factorize(cov: Covariance, eps: float = DEFAULT_REG_EPS, name=None):
    """Return ``(cov, factor)`` where ``factor`` is the Cholesky factor.

    For the diagonal kind the factor is the vector of standard deviations.
    If factorization fails, ``eps`` is added to the diagonal and the
    factorization is retried once; the returned ``cov`` is the one that
    factored.
    """
    factor = _try_factor(cov)
    if factor is not None:
        return cov, factor
    if eps > 0:
        cov = regularize(cov, eps)
        factor = _try_factor(cov)
        if factor is not None:
            return cov, factor
    label = f" for component {name}" if name is not None else ""
    raise SingularCovarianceError(
        f"covariance is not positive definite{label} even after adding {eps:g} to the diagonal",
        component=name,
    )


def log_det(cov: Covariance, eps: float = DEFAULT_REG_EPS) -> float:
    _, factor = factorize(cov, eps)
    if cov.kind == DIAGONAL:
        return float(2.0 * np.sum(np.log(factor)))
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def log_density_factored(X, mean, kind, factor):
    """Log-density of rows of ``X`` given a precomputed factor (no checks)."""
    diff = X - mean
    if kind == DIAGONAL:
        z = diff / factor
        half_log_det = np.sum(np.log(factor))
    else:
        z = solve_triangular(factor, diff.T, lower=True, check_finite=False).T
        half_log_det = np.sum(np.log(np.diag(factor)))
    maha = np.einsum("ij,ij->i", z, z)
    return -0.5 * (X.shape[1] * LOG_2PI + maha) - half_log_det


def log_density(x, mean, cov: Covariance, eps: float = DEFAULT_REG_EPS, name=None):
    """log N(x | mean, cov).

    ``x`` may be one vector (returns a float) or an (n, S) array (returns
    an array of n values).
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or mean.ndim != 1:
        raise ContractViolation("x must be a vector or a 2-d array and mean a vector")
    if X.shape[1] != mean.shape[0] or mean.shape[0] != cov.dim:
        raise ContractViolation(
            f"dimension mismatch: x has {X.shape[1]}, mean {mean.shape[0]}, covariance {cov.dim}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(mean))):
        raise ContractViolation("inputs must be finite")
    cov, factor = factorize(cov, eps, name=name)
    out = log_density_factored(X, mean, cov.kind, factor)
    return float(out[0]) if single else out


def log_sum_exp(terms, axis=None):
    """Max-shifted log(sum(exp(terms))).

    With ``axis=None`` the input is flattened and a float is returned.
    Terms equal to -inf are allowed; NaN is not.
    """
    a = np.asarray(terms, dtype=float)
    if a.size == 0:
        raise ContractViolation("log_sum_exp needs at least one term")
    if np.any(np.isnan(a)):
        raise ContractViolation("log_sum_exp got NaN")
    if axis is None:
        a = a.ravel()
        m = np.max(a)
        if not np.isfinite(m):
            return float(m)
        return float(m + np.log(np.sum(np.exp(a - m))))
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = safe + np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(logits, axis=-1):
    a = np.asarray(logits, dtype=float)
    return np.exp(a - np.expand_dims(log_sum_exp(a, axis=axis), axis))
