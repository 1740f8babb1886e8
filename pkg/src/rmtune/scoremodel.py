"""Two-component 1-D Gaussian mixture for unlabeled margin scores.

Fits class-conditional score Gaussians with EM (optionally holding the
mixture weights at known class priors), assigns components to classes by
marginal rank, and checks how Gaussian a score sample actually looks via
moment diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import AmbiguousRankError, DegenerateDataError, InsufficientDataError

SIGMA_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ScoreGaussians:
    """Class-conditional score model: class 0 (absent) and class 1 (present)."""

    mu0: float
    sigma0: float
    mu1: float
    sigma1: float
    prior0: float
    prior1: float
    prior_mode: str = "fixed"

    def __post_init__(self):
        if self.prior_mode not in ("fixed", "estimated"):
            raise DegenerateDataError(f"unknown prior_mode {self.prior_mode!r}")
        if min(self.sigma0, self.sigma1) < SIGMA_FLOOR:
            raise DegenerateDataError(
                f"sigma below floor {SIGMA_FLOOR}: ({self.sigma0}, {self.sigma1})"
            )
        if not (0.0 < self.prior0 < 1.0 and 0.0 < self.prior1 < 1.0):
            raise DegenerateDataError("priors must lie strictly inside (0, 1)")
        if abs(self.prior0 + self.prior1 - 1.0) > 1e-12:
            raise DegenerateDataError("priors must sum to 1")


@dataclass(frozen=True)
class GaussianityReport:
    g1: float  # bias-corrected sample skewness
    g2: float  # bias-corrected excess kurtosis
    n: int
    verdict: str  # plausible | skewed | heavy-tailed


def _log_components(x, mu, sigma, log_w):
    # (n, 2) log of weighted component densities
    z = (x[:, None] - mu[None, :]) / sigma[None, :]
    return log_w[None, :] - np.log(sigma)[None, :] - 0.5 * (z * z + _LOG_2PI)


def fit_gmm(scores, priors=None, init=None, max_iters=200, tol=1e-8,
            return_history=False):
    """EM fit of a two-component 1-D Gaussian mixture.

    With `priors` given, mixture weights are held fixed at (p0, p1) and only
    the Gaussian parameters are re-estimated; otherwise weights start at
    (0.5, 0.5) and are re-estimated each M step. Initialization is
    deterministic: means at the 10th/90th percentiles, both sigmas at the
    pooled standard deviation. Stops when the relative log-likelihood change
    drops below `tol` or after `max_iters` iterations.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 10:
        raise InsufficientDataError(f"need at least 10 scores, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateDataError("scores contain non-finite values")
    if np.ptp(x) == 0.0:
        raise DegenerateDataError("all scores identical; no mixture identifiable")

    fixed = priors is not None
    if fixed:
        w = np.array([float(priors[0]), float(priors[1])], dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w <= 0.0):
            raise DegenerateDataError(f"invalid priors {priors!r}")
    else:
        w = np.array([0.5, 0.5])

    if init is not None:
        mu = np.array([float(init[0]), float(init[2])])
        sigma = np.array([float(init[1]), float(init[3])])
    else:
        mu = np.percentile(x, [10.0, 90.0])
        sigma = np.full(2, max(float(np.std(x)), SIGMA_FLOOR))
    sigma = np.maximum(sigma, SIGMA_FLOOR)

    log_w = np.log(w)
    history = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        log_joint = _log_components(x, mu, sigma, log_w)
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(np.sum(log_norm))
        history.append(ll)
        if np.isfinite(prev_ll):
            if abs(ll - prev_ll) / max(abs(prev_ll), 1e-300) < tol:
                break
        prev_ll = ll

        resp = np.exp(log_joint - log_norm[:, None])  # (n, 2)
        nk = resp.sum(axis=0)
        for k in range(2):
            if nk[k] < 1e-12:
                continue  # collapsed component: keep current parameters
            mu[k] = float(resp[:, k] @ x) / nk[k]
            var = float(resp[:, k] @ (x - mu[k]) ** 2) / nk[k]
            sigma[k] = max(np.sqrt(var), SIGMA_FLOOR)
        if not fixed:
            w = np.maximum(nk / x.size, 1e-300)
            w = w / w.sum()
            log_w = np.log(w)

    fit = ScoreGaussians(
        mu0=float(mu[0]), sigma0=float(sigma[0]),
        mu1=float(mu[1]), sigma1=float(sigma[1]),
        prior0=float(priors[0]) if fixed else float(w[0]),
        prior1=float(priors[1]) if fixed else float(w[1]),
        prior_mode="fixed" if fixed else "estimated",
    )
    return (fit, history) if return_history else fit


def assign_components(fit: ScoreGaussians, expected_rank: str = "positive") -> ScoreGaussians:
    """Label mixture components as class 0 / class 1 by marginal rank.

    `expected_rank` names the minority class. In estimated-prior mode the
    smaller-weight component becomes the minority class; fixed-prior fits
    already carry their class labels and pass through unchanged.
    """
    if expected_rank not in ("positive", "negative"):
        raise AmbiguousRankError(f"unknown expected_rank {expected_rank!r}")
    if fit.prior_mode == "fixed":
        return fit
    if abs(fit.prior0 - fit.prior1) < 1e-9:
        raise AmbiguousRankError(
            f"component weights ({fit.prior0}, {fit.prior1}) too close to rank"
        )
    minority_is_second = fit.prior1 < fit.prior0
    want_minority_second = expected_rank == "positive"
    if minority_is_second == want_minority_second:
        return fit
    return replace(
        fit,
        mu0=fit.mu1, sigma0=fit.sigma1, mu1=fit.mu0, sigma1=fit.sigma0,
        prior0=fit.prior1, prior1=fit.prior0,
    )


def gaussianity_diagnostic(scores, skew_threshold=0.5,
                           kurtosis_threshold=1.0) -> GaussianityReport:
    """Moment-based check of the Gaussian score assumption."""
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 30:
        raise InsufficientDataError(f"need at least 30 scores, got {x.size}")
    if np.ptp(x) == 0.0:
        # a constant sample is symmetric and not heavy-tailed
        g1, g2 = 0.0, 0.0
    else:
        g1 = float(stats.skew(x, bias=False))
        g2 = float(stats.kurtosis(x, fisher=True, bias=False))
    if abs(g1) > skew_threshold:
        verdict = "skewed"
    elif abs(g2) > kurtosis_threshold:
        verdict = "heavy-tailed"
    else:
        verdict = "plausible"
    return GaussianityReport(g1=g1, g2=g2, n=int(x.size), verdict=verdict)


def save_scores(scores, path) -> None:
    x = np.asarray(scores, dtype=np.float64).ravel()
    with open(path, "w", encoding="utf-8") as f:
        for v in x:
            f.write(repr(float(v)) + "\n")


def load_scores(path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                values.append(float(line))
            except ValueError as e:
                raise DegenerateDataError(f"{path}: line {lineno}: {e}") from e
    return np.array(values, dtype=np.float64)


def format_report(report: GaussianityReport) -> str:
    return (
        f"n {report.n}\n"
        f"skewness {repr(report.g1)}\n"
        f"excess_kurtosis {repr(report.g2)}\n"
        f"verdict {report.verdict}\n"
    )
