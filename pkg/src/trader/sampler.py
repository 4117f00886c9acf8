"""Metropolis-within-Gibbs sampler for the source-guided horseshoe posterior.

Model: y = intercept + X beta + e, e ~ N(0, sigma2 I), with
beta_j ~ N(m_j(eta), sigma2 tau^2 lambda_j^2), lambda_j ~ half-Cauchy(0,1)
via a two-level inverse-gamma auxiliary decomposition, eta ~ Dirichlet on
the source weights plus a zero component, and sigma2 ~ InvGamma(nu, nu).
The prior mean m(eta) is the eta-weighted average of the rescaled sources;
with no sources it is identically zero and the sampler is the standard
horseshoe.

Scan order is fixed: beta, intercept, (lambda2, aux_nu), eta, sigma2.
All conditionals are exact Gibbs draws except eta, which takes one
Dirichlet random-walk Metropolis step.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import gammaln

from .core import (
    Dataset,
    NumericalError,
    PosteriorDraws,
    PosteriorSummary,
    SourceEstimate,
    TraderConfig,
    substream,
)
from .guide import (
    GuideSet,
    build_guide,
    empty_guide,
    estimate_beta_val,
    prior_mean,
    select_tau,
    split_validation,
)

__all__ = [
    "ChainState",
    "GibbsKernel",
    "sample_beta_conditional",
    "sample_lambda_conditional",
    "sample_sigma2_conditional",
    "sample_eta_mh",
    "run_chain",
    "fit_trader",
    "fit_horseshoe",
    "kappa",
    "summarize",
    "diagnostics",
    "DiagnosticRow",
]

# Dense Cholesky of the p x p precision below this size; the n-dimensional
# conjugation identity above it.
FAST_SAMPLING_THRESHOLD = 1000

# Leading substream tag for chain streams, so chain ids can never collide
# with the guide module's split/validation stream tags.
_TAG_CHAIN = 0


@dataclass
class ChainState:
    """Current values of all sampled quantities for one chain."""

    beta: np.ndarray
    sigma2: float
    lambda2: np.ndarray
    aux_nu: np.ndarray
    eta: np.ndarray
    intercept: float | None = None


def _invgamma(shape, rate, rng, size=None):
    # X = rate / Gamma(shape, 1) ~ InvGamma(shape, rate). For shape < ~0.05
    # the gamma draw can underflow to exactly 0; the inverse-gamma value is
    # then beyond float range and inf is the faithful result.
    g = rng.standard_gamma(shape, size=size)
    if size is None:
        return rate / g if g > 0 else math.inf
    with np.errstate(divide="ignore"):
        return rate / g


def _draw_beta(xtx, xty_adj, m, sigma2, tau2, lambda2, rng, prec_buf=None):
    """One exact draw from the Gaussian full conditional of beta.

    Precision is X'X/sigma2 + D^{-1}, D = diag(sigma2 tau^2 lambda2); the
    mean solves the precision system against X'y/sigma2 + D^{-1} m.
    Dense Cholesky of the p x p precision.
    """
    p = lambda2.shape[0]
    d_inv = 1.0 / (sigma2 * tau2 * lambda2)
    if prec_buf is None:
        prec_buf = np.empty((p, p), order="F")
    np.multiply(xtx, 1.0 / sigma2, out=prec_buf)
    diag = np.einsum("ii->i", prec_buf)
    diag += d_inv
    try:
        chol = cholesky(prec_buf, lower=True, overwrite_a=True, check_finite=False)
    except LinAlgError as exc:
        match = re.search(r"(\d+)-th leading minor", str(exc))
        pivot = int(match.group(1)) - 1 if match else None
        raise NumericalError(
            f"precision Cholesky failed (degenerate local or global scale): {exc}",
            pivot=pivot,
        ) from None
    rhs = xty_adj / sigma2 + d_inv * m
    half = solve_triangular(chol, rhs, lower=True, check_finite=False)
    z = rng.standard_normal(p)
    return solve_triangular(chol, half + z, lower=True, trans="T", check_finite=False)


def _draw_beta_fast(x, y_adj, m, sigma2, tau2, lambda2, rng):
    """Conjugation-identity draw for p >> n (Gaussian scale-mixture trick)."""
    n, p = x.shape
    d = sigma2 * tau2 * lambda2
    sd = np.sqrt(sigma2)
    phi = x / sd
    alpha = (y_adj - x @ m) / sd
    u = np.sqrt(d) * rng.standard_normal(p)
    delta = rng.standard_normal(n)
    v = phi @ u + delta
    gram = phi @ (d[:, None] * phi.T)
    gram[np.diag_indices(n)] += 1.0
    try:
        w = np.linalg.solve(gram, alpha - v)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"fast-path solve failed: {exc}") from None
    return m + u + d * (phi.T @ w)


def _update_lambda(beta, m, sigma2, tau2, aux_nu, rng):
    """Joint update of the squared local scales and their auxiliaries.

    lambda2_j | . ~ InvGamma(1, 1/aux_nu_j + r_j^2/(2 sigma2 tau^2)) with
    r_j = beta_j - m_j, then aux_nu_j | . ~ InvGamma(1, 1 + 1/lambda2_j).
    """
    r2 = (beta - m) ** 2
    rate = 1.0 / aux_nu + r2 / (2.0 * sigma2 * tau2)
    if not np.all(np.isfinite(rate)):
        raise NumericalError("non-finite rate in local-scale update")
    lambda2 = _invgamma(1.0, rate, rng, size=rate.shape)
    aux = _invgamma(1.0, 1.0 + 1.0 / lambda2, rng, size=rate.shape)
    return lambda2, aux


def _update_sigma2(rss, prior_quad, n, p, nu, rng):
    """sigma2 | . ~ InvGamma(nu + n/2 + p/2, nu + rss/2 + prior_quad).

    The p/2 shape term comes from the prior variance of beta scaling with
    sigma2; prior_quad = sum (beta_j - m_j)^2 / (2 tau^2 lambda2_j).
    """
    rate = nu + 0.5 * rss + prior_quad
    if not np.isfinite(rate) or rate <= 0:
        raise NumericalError(f"invalid rate in noise-variance update: {rate}")
    return float(_invgamma(nu + 0.5 * n + 0.5 * p, rate, rng))


def _dirichlet_logpdf(x, alpha):
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * np.log(x)).sum())


def _update_eta(beta, lambda2, sigma2, tau2, eta, omega_tilde, alpha, prop_c, rng):
    """One Dirichlet random-walk Metropolis step on the simplex weights.

    Proposal eta' ~ Dirichlet(c*eta + 0.1); acceptance uses the Dirichlet
    prior, the Gaussian beta-likelihood terms, and both proposal densities.
    Returns (eta, prior mean at eta); rejection keeps the current state.
    """
    inv_var = 1.0 / (sigma2 * tau2 * lambda2)
    m_cur = omega_tilde.T @ eta[:-1]

    def log_target(e, m):
        loglik = -0.5 * float(((beta - m) ** 2 * inv_var).sum())
        return loglik + float(((alpha - 1.0) * np.log(e)).sum())

    prop_conc = prop_c * eta + 0.1
    eta_prop = rng.dirichlet(prop_conc)
    log_u = np.log(rng.random())
    if not (np.all(eta_prop > 0.0) and np.all(np.isfinite(eta_prop))):
        return eta, m_cur
    m_prop = omega_tilde.T @ eta_prop[:-1]
    rev_conc = prop_c * eta_prop + 0.1
    log_ratio = (
        log_target(eta_prop, m_prop)
        - log_target(eta, m_cur)
        + _dirichlet_logpdf(eta, rev_conc)
        - _dirichlet_logpdf(eta_prop, prop_conc)
    )
    if log_u < log_ratio:
        return eta_prop, m_prop
    return eta, m_cur


class GibbsKernel:
    """Precomputed design quantities plus all conditional updates.

    Shared by the chain runner, the public per-conditional wrappers, and
    joint-validation harnesses; ``replace_y`` lets such harnesses resample
    the response without rebuilding the design products.
    """

    def __init__(self, train: Dataset, guide: GuideSet, config: TraderConfig):
        if train.p != guide.p:
            raise ValueError(f"dataset has p={train.p} but guide has p={guide.p}")
        self.x = train.x
        self.n = train.n
        self.p = train.p
        self.has_intercept = train.has_intercept
        self.tau = float(guide.tau)
        self.tau2 = self.tau**2
        self.nu = float(config.nu)
        self.omega_tilde = guide.omega_tilde
        self.n_sources = guide.n_sources
        self.alpha = np.concatenate([guide.theta, [guide.zeta]])
        self.prop_c = float(config.eta_proposal_concentration)
        self.xtx = self.x.T @ self.x
        self.xsum = self.x.sum(axis=0)
        self.fast = self.p > FAST_SAMPLING_THRESHOLD
        self._prec_buf = None if self.fast else np.empty((self.p, self.p), order="F")
        self.replace_y(train.y)

    def replace_y(self, y: np.ndarray) -> None:
        self.y = np.asarray(y, dtype=float)
        self.xty = self.x.T @ self.y

    def initial_state(self) -> ChainState:
        """Deterministic starting point: prior-mean weights, unit scales."""
        if self.n_sources:
            eta = self.alpha / self.alpha.sum()
        else:
            eta = np.ones(1)
        beta = self.prior_mean(eta)
        intercept = None
        if self.has_intercept:
            intercept = float(np.mean(self.y - self.x @ beta)) if self.n else 0.0
        return ChainState(
            beta=beta,
            sigma2=1.0,
            lambda2=np.ones(self.p),
            aux_nu=np.ones(self.p),
            eta=eta,
            intercept=intercept,
        )

    def prior_mean(self, eta: np.ndarray) -> np.ndarray:
        if self.n_sources == 0:
            return np.zeros(self.p)
        return self.omega_tilde.T @ eta[:-1]

    def sample_beta(self, state: ChainState, rng, m=None) -> np.ndarray:
        if m is None:
            m = self.prior_mean(state.eta)
        if state.intercept is not None:
            xty_adj = self.xty - state.intercept * self.xsum
        else:
            xty_adj = self.xty
        if self.fast:
            y_adj = self.y if state.intercept is None else self.y - state.intercept
            return _draw_beta_fast(self.x, y_adj, m, state.sigma2, self.tau2, state.lambda2, rng)
        return _draw_beta(
            self.xtx, xty_adj, m, state.sigma2, self.tau2, state.lambda2, rng,
            prec_buf=self._prec_buf,
        )

    def sample_intercept(self, state: ChainState, rng) -> float:
        # Flat prior: Gaussian around the mean residual with variance sigma2/n.
        resid_mean = float(np.mean(self.y - self.x @ state.beta))
        return resid_mean + np.sqrt(state.sigma2 / self.n) * rng.standard_normal()

    def sample_lambda(self, state: ChainState, rng, m=None):
        if m is None:
            m = self.prior_mean(state.eta)
        return _update_lambda(state.beta, m, state.sigma2, self.tau2, state.aux_nu, rng)

    def sample_eta(self, state: ChainState, rng):
        if self.n_sources == 0:
            return np.ones(1), np.zeros(self.p)
        return _update_eta(
            state.beta, state.lambda2, state.sigma2, self.tau2,
            state.eta, self.omega_tilde, self.alpha, self.prop_c, rng,
        )

    def sample_sigma2(self, state: ChainState, rng, m=None) -> float:
        if m is None:
            m = self.prior_mean(state.eta)
        resid = self.y - self.x @ state.beta
        if state.intercept is not None:
            resid = resid - state.intercept
        rss = float(resid @ resid)
        prior_quad = float(((state.beta - m) ** 2 / state.lambda2).sum()) / (2.0 * self.tau2)
        return _update_sigma2(rss, prior_quad, self.n, self.p, self.nu, rng)

    def scan(self, state: ChainState, rng) -> ChainState:
        """One systematic sweep: beta, intercept, local scales, eta, sigma2."""
        m = self.prior_mean(state.eta)
        state.beta = self.sample_beta(state, rng, m=m)
        if self.has_intercept:
            state.intercept = self.sample_intercept(state, rng)
        state.lambda2, state.aux_nu = self.sample_lambda(state, rng, m=m)
        state.eta, m = self.sample_eta(state, rng)
        state.sigma2 = self.sample_sigma2(state, rng, m=m)
        return state


def sample_beta_conditional(state: ChainState, guide: GuideSet, train: Dataset, rng) -> np.ndarray:
    """Draw beta from its Gaussian full conditional (see GibbsKernel)."""
    kernel = GibbsKernel(train, guide, TraderConfig())
    return kernel.sample_beta(state, rng)


def sample_lambda_conditional(state: ChainState, guide: GuideSet, rng):
    """Update (lambda2, aux_nu) from their inverse-gamma full conditionals."""
    m = prior_mean(guide, state.eta)
    return _update_lambda(state.beta, m, state.sigma2, guide.tau**2, state.aux_nu, rng)


def sample_sigma2_conditional(state: ChainState, guide: GuideSet, train: Dataset, rng) -> float:
    """Draw sigma2 from its inverse-gamma full conditional."""
    m = prior_mean(guide, state.eta)
    resid = train.y - train.x @ state.beta
    if state.intercept is not None:
        resid = resid - state.intercept
    rss = float(resid @ resid)
    prior_quad = float(((state.beta - m) ** 2 / state.lambda2).sum()) / (2.0 * guide.tau**2)
    return _update_sigma2(rss, prior_quad, train.n, train.p, TraderConfig().nu, rng)


def sample_eta_mh(state: ChainState, guide: GuideSet, rng, proposal_concentration: float = 50.0):
    """One Metropolis step on eta; with no sources returns the fixed (1,)."""
    if guide.n_sources == 0:
        return np.ones(1)
    alpha = np.concatenate([guide.theta, [guide.zeta]])
    eta, _ = _update_eta(
        state.beta, state.lambda2, state.sigma2, guide.tau**2,
        state.eta, guide.omega_tilde, alpha, proposal_concentration, rng,
    )
    return eta


def run_chain(
    train: Dataset,
    guide: GuideSet,
    config: TraderConfig,
    chain_id: int,
    seed: int,
) -> PosteriorDraws:
    """Run one chain: n_warmup discarded sweeps, n_samples retained.

    Deterministic given (seed, chain_id); each chain draws from the
    substream addressed by its id. Numerical failures abort with the
    iteration index and chain id attached.
    """
    kernel = GibbsKernel(train, guide, config)
    rng = substream(seed, _TAG_CHAIN, chain_id)
    state = kernel.initial_state()
    total = config.n_warmup + config.n_samples
    keep = config.n_samples
    beta = np.empty((keep, kernel.p))
    sigma2 = np.empty(keep)
    lambda2 = np.empty((keep, kernel.p))
    eta = np.empty((keep, kernel.n_sources + 1))
    intercept = np.empty(keep) if kernel.has_intercept else None
    for it in range(total):
        try:
            kernel.scan(state, rng)
        except NumericalError as exc:
            exc.iteration = it
            exc.chain_id = chain_id
            raise
        if it >= config.n_warmup:
            s = it - config.n_warmup
            beta[s] = state.beta
            sigma2[s] = state.sigma2
            lambda2[s] = state.lambda2
            eta[s] = state.eta
            if intercept is not None:
                intercept[s] = state.intercept
    return PosteriorDraws(
        beta=beta,
        sigma2=sigma2,
        lambda2=lambda2,
        eta=eta,
        tau=kernel.tau,
        chain_id=chain_id,
        config_digest=config.digest(),
        intercept=intercept,
    )


def _fit(data: Dataset, guide: GuideSet, config: TraderConfig):
    draws = [
        run_chain(data, guide, config, chain_id, config.seed)
        for chain_id in range(config.n_chains)
    ]
    return draws, summarize(draws, config.ci_level)


def fit_trader(
    data: Dataset,
    sources: list[SourceEstimate],
    config: TraderConfig,
) -> tuple[list[PosteriorDraws], PosteriorSummary, GuideSet]:
    """Guided fit: split, estimate beta_val, build the guide, run chains.

    A third of the target rows (config.validation_fraction) is held out to
    estimate beta_val; the chains run on the remaining rows only. With an
    empty source list the split is skipped and the fit is exactly
    ``fit_horseshoe`` on all rows (same seed, same draws).

    Returns
    -------
    (draws per chain, pooled summary, guide)
    """
    for src in sources:
        if src.p != data.p:
            raise ValueError(f"source {src.id!r} has length {src.p}, expected p={data.p}")
    if not sources:
        guide = _horseshoe_guide(data, config)
        draws, summary = _fit(data, guide, config)
        return draws, summary, guide
    train, val = split_validation(data, config.validation_fraction, config.seed)
    beta_val = estimate_beta_val(val, config)
    guide = build_guide(sources, beta_val, config, train.n)
    draws, summary = _fit(train, guide, config)
    return draws, summary, guide


def _horseshoe_guide(data: Dataset, config: TraderConfig) -> GuideSet:
    tau = config.tau_override
    if tau is None:
        psi = config.psi_hat if config.psi_hat is not None else data.p / 2.0
        tau = select_tau(data.p, data.n, psi)
    return empty_guide(data.p, tau, zeta=config.zeta)


def fit_horseshoe(
    data: Dataset,
    config: TraderConfig,
) -> tuple[list[PosteriorDraws], PosteriorSummary]:
    """Standard horseshoe fit on all rows: zero prior mean, no split.

    The global scale comes from the informative-count rule on the full row
    count unless config.tau_override is set.
    """
    draws, summary = _fit(data, _horseshoe_guide(data, config), config)
    return draws, summary


def kappa(tau: float, lambda_j: float, n0: int) -> float:
    """Shrinkage-toward-source weight 1/(1 + tau^2 lambda_j^2 n0)."""
    if tau < 0 or lambda_j <= 0 or n0 < 0:
        raise ValueError("kappa requires tau >= 0, lambda_j > 0, n0 >= 0")
    return 1.0 / (1.0 + tau**2 * lambda_j**2 * n0)


def summarize(draws: list[PosteriorDraws], level: float) -> PosteriorSummary:
    """Pool chains and compute per-coefficient mean, median, and interval.

    Equal-tailed interval at ``level`` from linear-interpolation quantiles;
    a coefficient is selected when its interval excludes zero.
    """
    if not draws:
        raise ValueError("summarize needs at least one chain")
    if any(d.n_retained < 2 for d in draws):
        raise ValueError("summarize needs at least 2 retained draws per chain")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0,1)")
    pooled = np.concatenate([d.beta for d in draws], axis=0)
    tail = (1.0 - level) / 2.0
    lower, median, upper = np.quantile(pooled, [tail, 0.5, 1.0 - tail], axis=0)
    selected = (lower > 0.0) | (upper < 0.0)
    return PosteriorSummary(
        mean=pooled.mean(axis=0),
        median=median,
        lower=lower,
        upper=upper,
        selected=selected,
        level=level,
    )


@dataclass(frozen=True)
class DiagnosticRow:
    parameter: str
    rhat: float | None
    ess: float
    flagged: bool


def _split_rhat(mat: np.ndarray) -> float:
    # mat is (chains, samples); split each chain in half per the usual recipe.
    m, s = mat.shape
    half = s // 2
    halves = np.concatenate([mat[:, :half], mat[:, half: 2 * half]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    between = half * halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def _ess_single(x: np.ndarray) -> float:
    # Geyer initial monotone positive sequence on FFT autocorrelations.
    x = np.asarray(x, dtype=float)
    s = x.size
    x = x - x.mean()
    var0 = float(x @ x) / s
    if var0 == 0.0:
        return float(s)
    nfft = 1 << (2 * s - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:s] / s
    rho = acov / acov[0]
    pair = rho[: 2 * (s // 2)].reshape(-1, 2).sum(axis=1)
    neg = np.nonzero(pair <= 0.0)[0]
    cut = int(neg[0]) if neg.size else pair.size
    if cut == 0:
        return float(s)
    head = np.minimum.accumulate(pair[:cut])
    tau_int = max(2.0 * float(head.sum()) - 1.0, 1e-12)
    return float(min(s / tau_int, s))


def diagnostics(draws: list[PosteriorDraws]) -> list[DiagnosticRow]:
    """Split-Rhat and autocorrelation ESS per parameter across chains.

    Rows cover every beta coordinate, the intercept when present, sigma2,
    and each eta component for guided fits. Rhat needs at least two chains
    and is omitted (None) otherwise; rows with Rhat > 1.05 are flagged.
    """
    if not draws:
        raise ValueError("diagnostics needs at least one chain")
    p = draws[0].p
    k1 = draws[0].eta.shape[1]
    series: list[tuple[str, np.ndarray]] = []
    for j in range(p):
        series.append((f"beta[{j}]", np.stack([d.beta[:, j] for d in draws])))
    if draws[0].intercept is not None:
        series.append(("intercept", np.stack([d.intercept for d in draws])))
    series.append(("sigma2", np.stack([d.sigma2 for d in draws])))
    if k1 > 1:
        for k in range(k1):
            series.append((f"eta[{k}]", np.stack([d.eta[:, k] for d in draws])))
    rows = []
    for name, mat in series:
        rhat = _split_rhat(mat) if mat.shape[0] >= 2 else None
        ess = float(sum(_ess_single(row) for row in mat))
        flagged = rhat is not None and rhat > 1.05
        rows.append(DiagnosticRow(name, rhat, ess, flagged))
    return rows
