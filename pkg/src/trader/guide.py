"""Source preparation for guided fits.

Two steps turn raw source estimates into a prior guide: each source is
rescaled so its norm matches a coefficient estimate from a held-out
validation split of the target, and each gets a Dirichlet concentration
equal to its cosine similarity with that estimate (clamped below). The
module also hosts the fixed-point rule that picks the global scale tau
from a prior guess of the informative-element count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, SourceEstimate, TraderConfig, derive_seed, substream

__all__ = [
    "GuideSet",
    "empty_guide",
    "split_validation",
    "estimate_beta_val",
    "rescale_source",
    "cosine_similarity",
    "build_guide",
    "select_tau",
    "expected_informative_count",
    "prior_mean",
]

# Fixed substream tags so every derived stream has a stable address.
_TAG_SPLIT = 101
_TAG_VAL_FIT = 102


@dataclass(frozen=True)
class GuideSet:
    """Rescaled sources plus the weighting and scale hyperparameters.

    ``omega_tilde`` is K x p (empty for the plain horseshoe), ``theta`` the
    per-source Dirichlet concentrations, ``zeta`` the concentration of the
    zero component, and ``tau`` the fixed global scale.
    """

    omega_tilde: np.ndarray
    theta: np.ndarray
    zeta: float
    beta_val: np.ndarray
    scale_factors: np.ndarray
    tau: float

    def __post_init__(self):
        omega_tilde = np.atleast_2d(np.asarray(self.omega_tilde, dtype=float))
        theta = np.asarray(self.theta, dtype=float).ravel()
        beta_val = np.asarray(self.beta_val, dtype=float).ravel()
        factors = np.asarray(self.scale_factors, dtype=float).ravel()
        if omega_tilde.size == 0:
            omega_tilde = omega_tilde.reshape(0, beta_val.shape[0])
        k = omega_tilde.shape[0]
        if theta.shape != (k,) or factors.shape != (k,):
            raise ValueError("theta and scale_factors must have one entry per source")
        if omega_tilde.shape[1] != beta_val.shape[0]:
            raise ValueError("omega_tilde and beta_val disagree on p")
        if k and (np.any(theta <= 0) or np.any(factors <= 0)):
            raise ValueError("theta and scale_factors must be strictly positive")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if k:
            norms = np.linalg.norm(omega_tilde, axis=1)
            target = np.linalg.norm(beta_val)
            if not np.allclose(norms, target, rtol=1e-10, atol=0.0):
                raise ValueError("rescaled sources must share the norm of beta_val")
        for name, arr in (("omega_tilde", omega_tilde), ("theta", theta),
                          ("beta_val", beta_val), ("scale_factors", factors)):
            frozen = np.array(arr, dtype=float)
            frozen.setflags(write=False)
            object.__setattr__(self, name, frozen)

    @property
    def n_sources(self) -> int:
        return self.omega_tilde.shape[0]

    @property
    def p(self) -> int:
        return self.omega_tilde.shape[1]

    def to_dict(self) -> dict:
        return {
            "omega_tilde": self.omega_tilde.tolist(),
            "theta": self.theta.tolist(),
            "zeta": float(self.zeta),
            "beta_val": self.beta_val.tolist(),
            "scale_factors": self.scale_factors.tolist(),
            "tau": float(self.tau),
        }


def empty_guide(p: int, tau: float, zeta: float = 1.0) -> GuideSet:
    """Guide with no sources: the sampler reverts to the plain horseshoe."""
    return GuideSet(
        omega_tilde=np.zeros((0, p)),
        theta=np.zeros(0),
        zeta=zeta,
        beta_val=np.zeros(p),
        scale_factors=np.zeros(0),
        tau=tau,
    )


def split_validation(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Randomly partition rows into (train, val) with |val| = round(n*fraction).

    Deterministic given the seed; both parts keep the original row order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    n = data.n
    if n * fraction < 2:
        raise ValueError(f"validation split needs n*fraction >= 2, got n={n}, fraction={fraction}")
    n_val = int(round(n * fraction))
    if n_val < 1 or n - n_val < 1:
        raise ValueError(f"split leaves an empty part: n={n}, n_val={n_val}")
    perm = substream(seed, _TAG_SPLIT).permutation(n)
    val_rows = np.sort(perm[:n_val])
    train_rows = np.sort(perm[n_val:])
    return data.subset(train_rows), data.subset(val_rows)


def estimate_beta_val(val: Dataset, config: TraderConfig) -> np.ndarray:
    """Posterior-mean coefficients from a plain horseshoe fit on the split.

    Uses a shortened chain (warmup and samples halved) and a seed derived
    from the config seed, so the validation fit never shares a stream with
    the main chains.
    """
    from .sampler import fit_horseshoe  # deferred: sampler depends on this module

    short = replace(
        config,
        n_warmup=max(1, config.n_warmup // 2),
        n_samples=max(2, config.n_samples // 2),
        seed=derive_seed(config.seed, _TAG_VAL_FIT),
    )
    _, summary = fit_horseshoe(val, short)
    return np.array(summary.mean)


def rescale_source(omega_hat: np.ndarray, beta_val: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a source estimate so its norm matches ``beta_val``'s."""
    omega_hat = np.asarray(omega_hat, dtype=float).ravel()
    beta_val = np.asarray(beta_val, dtype=float).ravel()
    norm_val = float(np.linalg.norm(beta_val))
    norm_omega = float(np.linalg.norm(omega_hat))
    if norm_val == 0.0:
        raise ValueError("beta_val has zero norm: the validation fit is uninformative")
    if norm_omega == 0.0:
        raise ValueError("zero-norm source estimate cannot be rescaled")
    factor = norm_val / norm_omega
    return factor * omega_hat, factor


def cosine_similarity(omega_hat: np.ndarray, beta_val: np.ndarray) -> float:
    omega_hat = np.asarray(omega_hat, dtype=float).ravel()
    beta_val = np.asarray(beta_val, dtype=float).ravel()
    norm_omega = float(np.linalg.norm(omega_hat))
    norm_val = float(np.linalg.norm(beta_val))
    if norm_omega == 0.0 or norm_val == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(omega_hat @ beta_val / (norm_omega * norm_val))


def build_guide(
    sources: list[SourceEstimate],
    beta_val: np.ndarray,
    config: TraderConfig,
    n_train: int,
) -> GuideSet:
    """Assemble the guide: rescaled sources, clamped cosine weights, tau.

    With no sources the result is the empty guide (pure horseshoe mode).
    """
    beta_val = np.asarray(beta_val, dtype=float).ravel()
    p = beta_val.shape[0]
    tau = config.tau_override
    if tau is None:
        psi = config.psi_hat if config.psi_hat is not None else p / 2.0
        tau = select_tau(p, n_train, psi)
    if not sources:
        guide = empty_guide(p, tau, zeta=config.zeta)
        return replace(guide, beta_val=beta_val)
    omega_tilde = np.empty((len(sources), p))
    theta = np.empty(len(sources))
    factors = np.empty(len(sources))
    for k, src in enumerate(sources):
        if src.p != p:
            raise ValueError(f"source {src.id!r} has length {src.p}, expected {p}")
        omega_tilde[k], factors[k] = rescale_source(src.omega_hat, beta_val)
        theta[k] = max(cosine_similarity(src.omega_hat, beta_val), config.theta_floor)
    return GuideSet(
        omega_tilde=omega_tilde,
        theta=theta,
        zeta=config.zeta,
        beta_val=beta_val,
        scale_factors=factors,
        tau=tau,
    )


def select_tau(p: int, n0: int, psi_hat: float) -> float:
    """Global scale that makes the expected informative count equal psi_hat.

    Computed as ((p - psi)/psi)/sqrt(n0) so psi = p/2 gives exactly
    1/sqrt(n0).
    """
    if not 0.0 < psi_hat < p:
        raise ValueError(f"psi_hat must lie strictly between 0 and p, got {psi_hat} for p={p}")
    if n0 < 1:
        raise ValueError(f"n0 must be at least 1, got {n0}")
    return ((p - psi_hat) / psi_hat) / math.sqrt(n0)


def expected_informative_count(tau: float, p: int, n0: int) -> float:
    """Expected number of coefficients drawn toward the source prior mean."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return p / (1.0 + tau * math.sqrt(n0))


def prior_mean(guide: GuideSet, eta: np.ndarray) -> np.ndarray:
    """Prior mean of beta under weights eta: sum_k eta_k * omega_tilde[k].

    The last eta component multiplies the zero vector, so placing all mass
    there gives an exactly zero mean.
    """
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.shape[0] != guide.n_sources + 1:
        raise ValueError("eta must have one entry per source plus the zero component")
    if guide.n_sources == 0:
        return np.zeros(guide.p)
    return guide.omega_tilde.T @ eta[:-1]
