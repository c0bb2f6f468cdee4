"""Soft-message types and their combination rules.

Three message families cover everything the receiver chain exchanges:
complex Gaussian vectors (channel weights), Gamma distributions (noise
precision) and discrete weight vectors over bits or constellation
symbols.  Messages are immutable values; combining them never mutates
the inputs, so they are safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "DegenerateMessageError",
    "GaussianVectorMessage",
    "GammaMessage",
    "BitSoftMessage",
    "SymbolSoftMessage",
    "gaussian_product",
    "gamma_mean",
    "normalize",
    "bit_message_product",
    "bit_product_raw",
    "BIT_CONFLICTS",
    "PROB_FLOOR",
]

# Probability floor applied before any log; avoids -inf at saturated bits.
PROB_FLOOR = 1e-12

# Jitter added to a diagonal when a linear solve fails on an
# ill-conditioned covariance (band-limited priors are near-singular).
_SOLVE_JITTER = 1e-12


class DegenerateMessageError(ValueError):
    """A message (or combination of messages) carries no information."""


class _ConflictCounter:
    """Counts certain-vs-certain bit conflicts that were resolved to 1/2.

    Long Monte-Carlo runs must not abort on one saturated frame, so
    conflicting hard beliefs resolve to a neutral bit and bump this
    counter instead of raising.
    """

    def __init__(self) -> None:
        self.count = 0

    def bump(self, n: int = 1) -> None:
        self.count += n

    def reset(self) -> None:
        self.count = 0


BIT_CONFLICTS = _ConflictCounter()


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianVectorMessage:
    """Complex Gaussian belief over a vector, with diagonal or full covariance.

    Exactly one of ``variances`` (per-entry variance, ``inf`` allowed for
    non-informative entries) or ``covariance`` (full Hermitian matrix) is set.
    """

    mean: np.ndarray
    variances: np.ndarray | None = None
    covariance: np.ndarray | None = None

    def __post_init__(self):
        mean = _readonly(np.array(self.mean, dtype=np.complex128))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        object.__setattr__(self, "mean", mean)
        if (self.variances is None) == (self.covariance is None):
            raise ValueError("exactly one of variances/covariance must be given")
        if self.variances is not None:
            var = _readonly(np.array(self.variances, dtype=np.float64))
            if var.shape != mean.shape:
                raise ValueError("mean/variance length mismatch")
            if np.any(np.isnan(var)) or np.any(var < 0):
                raise ValueError("variances must be nonnegative")
            object.__setattr__(self, "variances", var)
        else:
            cov = np.array(self.covariance, dtype=np.complex128)
            n = mean.shape[0]
            if cov.shape != (n, n):
                raise ValueError("covariance shape does not match mean")
            if not np.allclose(cov, cov.conj().T, atol=1e-8, rtol=1e-8):
                raise ValueError("covariance must be Hermitian")
            cov = _readonly(0.5 * (cov + cov.conj().T))
            object.__setattr__(self, "covariance", cov)

    @classmethod
    def diagonal(cls, mean, variances) -> "GaussianVectorMessage":
        return cls(mean=mean, variances=variances)

    @classmethod
    def full(cls, mean, covariance) -> "GaussianVectorMessage":
        return cls(mean=mean, covariance=covariance)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.variances is not None

    def precisions(self) -> np.ndarray:
        """Per-entry precision of a diagonal message (0 where variance is inf)."""
        if self.variances is None:
            raise ValueError("precisions() is defined for diagonal messages")
        with np.errstate(divide="ignore"):
            return np.where(self.variances > 0, 1.0 / self.variances, np.inf)


@dataclass(frozen=True)
class GammaMessage:
    """Gamma belief over a positive precision, as a (shape, rate) pair."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape < 0 or self.rate < 0:
            raise ValueError("shape and rate must be nonnegative")


@dataclass(frozen=True)
class BitSoftMessage:
    """Per-bit probability of the bit being 1."""

    p1: np.ndarray

    def __post_init__(self):
        p = _readonly(np.array(self.p1, dtype=np.float64))
        if p.ndim != 1:
            raise ValueError("p1 must be a vector")
        if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("bit probabilities must lie in [0, 1]")
        object.__setattr__(self, "p1", p)

    def __len__(self) -> int:
        return self.p1.shape[0]

    @classmethod
    def neutral(cls, n: int) -> "BitSoftMessage":
        return cls(np.full(n, 0.5))


@dataclass(frozen=True)
class SymbolSoftMessage:
    """Nonnegative weights over constellation points, one row per symbol."""

    weights: np.ndarray

    def __post_init__(self):
        w = _readonly(np.array(self.weights, dtype=np.float64))
        if np.any(np.isnan(w)) or np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "weights", w)


def gaussian_product(a: GaussianVectorMessage, b: GaussianVectorMessage) -> GaussianVectorMessage:
    """Combine two Gaussian messages: precisions add, means are precision-weighted.

    Supports diagonal x diagonal, full x diagonal and full x full covariance
    combinations.  Singular full covariances are handled without ever
    inverting them; a zero-precision message is an exact identity.

    Raises
    ------
    ValueError
        On dimension mismatch.
    DegenerateMessageError
        If both inputs carry zero precision everywhere.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.is_diagonal and b.is_diagonal:
        return _product_diag_diag(a, b)
    if a.is_diagonal:
        a, b = b, a
    if b.is_diagonal:
        return _product_full_diag(a, b)
    return _product_full_full(a, b)


def _product_diag_diag(a, b):
    pa, pb = a.precisions(), b.precisions()
    if not (np.any(pa > 0) or np.any(pb > 0)):
        raise DegenerateMessageError("both messages carry zero precision")
    prec = pa + pb
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(prec > 0, 1.0 / prec, np.inf)
        mean = np.where(
            prec > 0,
            (np.where(np.isinf(pa), 0.0, pa) * a.mean + np.where(np.isinf(pb), 0.0, pb) * b.mean)
            / np.where(np.isfinite(prec) & (prec > 0), prec, 1.0),
            0.0,
        )
    # Delta entries dominate: an exact observation pins mean and variance.
    inf_a = np.isinf(pa)
    inf_b = np.isinf(pb) & ~inf_a
    if np.any(inf_a) or np.any(inf_b):
        mean = np.where(inf_a, a.mean, np.where(inf_b, b.mean, mean))
        var = np.where(inf_a | inf_b, 0.0, var)
    return GaussianVectorMessage.diagonal(mean, var)


def _solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        jitter = _SOLVE_JITTER * np.eye(mat.shape[0])
        return np.linalg.solve(mat + jitter, rhs)


def _cho_solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(mat), rhs)
    except np.linalg.LinAlgError:
        jitter = _SOLVE_JITTER * np.eye(mat.shape[0])
        return cho_solve(cho_factor(mat + jitter), rhs)


def _product_full_diag(a, b):
    # a full, b diagonal.  Uses Sigma = Sp - Sp D^1/2 (I + D^1/2 Sp D^1/2)^-1 D^1/2 Sp,
    # which never inverts the (possibly singular) full covariance.
    d = b.precisions()
    if np.any(np.isinf(d)):
        raise ValueError("zero-variance entries are not supported against a full covariance")
    if not np.any(d > 0):
        return a
    mask = d > 0
    ds = np.sqrt(d[mask])
    cov = a.covariance
    scaled = cov[:, mask] * ds[None, :]  # Sp D^1/2, n x m
    inner = np.eye(mask.sum()) + ds[:, None] * cov[np.ix_(mask, mask)] * ds[None, :]
    back = _cho_solve(inner, ds[:, None] * cov[mask, :])  # S^-1 D^1/2 Sp, m x n
    post_cov = cov - scaled @ back
    post_cov = 0.5 * (post_cov + post_cov.conj().T)
    weighted = np.where(mask, d, 0.0) * (b.mean - a.mean)
    post_mean = a.mean + post_cov @ weighted
    return GaussianVectorMessage.full(post_mean, post_cov)


def _product_full_full(a, b):
    total = a.covariance + b.covariance
    rhs = np.concatenate([a.mean[:, None], b.mean[:, None], b.covariance], axis=1)
    sol = _solve(total, rhs)
    post_mean = b.covariance @ sol[:, 0] + a.covariance @ sol[:, 1]
    post_cov = a.covariance @ sol[:, 2:]
    post_cov = 0.5 * (post_cov + post_cov.conj().T)
    return GaussianVectorMessage.full(post_mean, post_cov)


def gamma_mean(g: GammaMessage) -> float:
    """Mean of a Gamma belief, shape/rate."""
    if g.rate <= 0:
        raise ZeroDivisionError("gamma message has zero rate; mean undefined")
    return g.shape / g.rate


SoftMessage = Union[SymbolSoftMessage, BitSoftMessage]


def normalize(msg: SoftMessage) -> SoftMessage:
    """Renormalize symbol weights to sum to 1 per symbol; bit messages pass through."""
    if isinstance(msg, BitSoftMessage):
        return msg
    w = msg.weights
    sums = w.sum(axis=-1, keepdims=True)
    if np.any(sums <= 0):
        raise DegenerateMessageError("all-zero weight vector cannot be normalized")
    return SymbolSoftMessage(w / sums)


def bit_product_raw(arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Log-domain product of bit beliefs given as raw p1 arrays.

    Returns the combined p1 and a boolean mask of bits where certain,
    contradictory beliefs (an exact 1 against an exact 0) collapsed to 1/2.
    """
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in arrays])
    conflict = np.any(stack <= 0.0, axis=0) & np.any(stack >= 1.0, axis=0)
    clipped = np.clip(stack, PROB_FLOOR, 1.0 - PROB_FLOOR)
    log1 = np.log(clipped).sum(axis=0)
    log0 = np.log1p(-clipped).sum(axis=0)
    p1 = np.exp(log1 - np.logaddexp(log0, log1))
    return np.where(conflict, 0.5, p1), conflict


def bit_message_product(msgs: Sequence[BitSoftMessage]) -> BitSoftMessage:
    """Combine independent bit beliefs; 0.5 entries are neutral.

    Computed in the log domain after clamping probabilities to
    [PROB_FLOOR, 1 - PROB_FLOOR].  A hard 1 against a hard 0 on the same
    bit resolves to 0.5 and bumps ``BIT_CONFLICTS``.
    """
    if not msgs:
        raise ValueError("need at least one message")
    n = len(msgs[0])
    if any(len(m) != n for m in msgs):
        raise ValueError("bit message lengths differ")
    p1, conflict = bit_product_raw([m.p1 for m in msgs])
    if np.any(conflict):
        BIT_CONFLICTS.bump(int(conflict.sum()))
    return BitSoftMessage(p1)
