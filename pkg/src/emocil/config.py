"""Fit configuration shared by the EM and variational fitters."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, replace

from .errors import ContractViolation
from .gaussian import COVARIANCE_KINDS, DEFAULT_REG_EPS, FULL


@dataclass(frozen=True)
class FitConfig:
    max_components: int = 10
    max_iters: int = 200
    rel_tol: float = 1e-6
    n_restarts: int = 5
    reg_eps: float = DEFAULT_REG_EPS
    covariance_kind: str = FULL
    seed: int = 0

    def __post_init__(self):
        for name in ("max_components", "max_iters", "n_restarts"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise ContractViolation("rel_tol must be in (0, 1)")
        if self.reg_eps < 0:
            raise ContractViolation("reg_eps must be >= 0")
        if self.covariance_kind not in COVARIANCE_KINDS:
            raise ContractViolation(f"unknown covariance kind {self.covariance_kind!r}")
        if self.seed < 0:
            raise ContractViolation("seed must be >= 0")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def class_seed(global_seed, class_key) -> int:
    """Per-class fit seed: global seed XOR a stable hash of the class key."""
    return int(global_seed) ^ zlib.crc32(str(class_key).encode("utf-8"))
