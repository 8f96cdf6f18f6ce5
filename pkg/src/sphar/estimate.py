"""Per-multipole least-squares kernel estimation.

The estimator regresses each multipole's coefficient series on its own p lags,
pooling time and order m, and reconstructs the kernel as
k_hat(z) = sum_{ell <= L_N} phi_hat_ell (2 ell + 1)/(4 pi) P_ell(z).
`KernelRegressor` wraps the same machinery behind the scikit-learn estimator
API so it composes with pipelines and parameter search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator

from ._validation import check_interval, check_nonnegative_int, check_positive_int
from .model import _legendre_weighted_sum
from .simulate import CoefficientPanel

__all__ = [
    "SingularFitError",
    "TruncationPolicy",
    "MultipoleFit",
    "KernelEstimate",
    "fit_multipole",
    "estimate_kernel",
    "eval_estimate",
    "PluginBandwidth",
    "plugin_bandwidth",
    "KernelRegressor",
    "write_estimate_csv",
]

RCOND_FLOOR = 1e-12


class SingularFitError(RuntimeError):
    """Normal equations too ill-conditioned to solve at some multipole."""

    def __init__(self, ell, rcond):
        self.ell = ell
        self.rcond = rcond
        super().__init__(
            f"normal equations at ell={ell} are numerically singular "
            f"(reciprocal condition {rcond:.3g} < {RCOND_FLOOR:g})"
        )


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation level rule: fixed L, or L_N = floor(coeff * N^exponent)."""

    kind: str
    level: int = 0
    coeff: float = 1.0
    exponent: float = 0.0

    @classmethod
    def fixed(cls, level: int) -> "TruncationPolicy":
        check_nonnegative_int("level", level)
        return cls(kind="fixed", level=level)

    @classmethod
    def rate(cls, coeff: float, exponent: float) -> "TruncationPolicy":
        if coeff <= 0:
            raise ValueError("coeff must be positive")
        if not 0.0 < exponent < 1.0:
            raise ValueError("exponent must lie in (0, 1)")
        return cls(kind="rate", coeff=coeff, exponent=exponent)

    def level_for(self, n_effective: int) -> int:
        """Truncation level for N = n - p effective time points."""
        check_positive_int("n_effective", n_effective)
        if self.kind == "fixed":
            return self.level
        if self.kind == "rate":
            value = int(math.floor(self.coeff * n_effective**self.exponent))
            return max(value, 0)
        raise ValueError(f"unknown truncation policy kind {self.kind!r}")


@dataclass(frozen=True)
class MultipoleFit:
    """Least-squares fit of one multipole's AR(p) coefficients.

    ``gram`` holds X'X / (N (2 ell + 1)), the per-observation average of the
    lagged cross-products (divide by the true spectrum C_ell to recover the
    normalized design matrix used in the theory).
    """

    ell: int
    coef: np.ndarray
    sample_size: int
    gram: np.ndarray


def _series_block(series) -> np.ndarray:
    block = np.asarray(series, dtype=float)
    if block.ndim == 1:
        block = block[None, :]
    if block.ndim != 2:
        raise ValueError("a multipole slice must be a 1-d series or (2 ell + 1, n) block")
    return block


def fit_multipole(series, order: int, ell: int | None = None) -> MultipoleFit:
    """OLS fit of a(t) on its p lags, pooled over t = p+1..n and all rows.

    ``series`` is the (2 ell + 1, n) block (a single series may be passed
    1-d).  Raises SingularFitError when the normal equations have reciprocal
    condition below 1e-12 (e.g. an all-zero block); no silent pseudo-inverse.
    """
    check_positive_int("order", order)
    block = _series_block(series)
    n = block.shape[1]
    if n <= order:
        raise ValueError("series length must exceed the order")
    p = order
    n_eff = n - p
    label = block.shape[0] // 2 if ell is None else ell
    gram = np.empty((p, p))
    rhs = np.empty(p)
    target = block[:, p:n]
    lags = [block[:, p - j : n - j] for j in range(1, p + 1)]
    for i in range(p):
        rhs[i] = np.einsum("mt,mt->", lags[i], target)
        for j in range(i, p):
            gram[i, j] = gram[j, i] = np.einsum("mt,mt->", lags[i], lags[j])
    eigs = np.linalg.eigvalsh(gram)
    top = eigs[-1]
    rcond = 0.0 if top <= 0 else max(eigs[0], 0.0) / top
    if rcond < RCOND_FLOOR:
        raise SingularFitError(label, rcond)
    coef = cho_solve(cho_factor(gram), rhs)
    scale = n_eff * block.shape[0]
    return MultipoleFit(ell=label, coef=coef, sample_size=scale, gram=gram / scale)


@dataclass(frozen=True)
class KernelEstimate:
    """Fitted kernel: per-multipole coefficients up to the truncation level."""

    order: int
    truncation_level: int
    fits: tuple
    n_steps: int
    n_effective: int

    def coef_table(self) -> np.ndarray:
        return np.vstack([fit.coef for fit in self.fits])

    def evaluate(self, z) -> np.ndarray:
        """k_hat(z): shape (p,) for scalar z, (nz, p) for a grid."""
        scalar = np.isscalar(z) or getattr(z, "ndim", 0) == 0
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        check_interval("z", z_arr, -1.0, 1.0)
        out = _legendre_weighted_sum(self.coef_table(), z_arr)
        return out[0] if scalar else out


def _panel_accessor(panel):
    """Normalize panel-like input to (series_fn, degree_max, n_steps)."""
    if isinstance(panel, CoefficientPanel):
        return panel.series, panel.degree_max, panel.n_steps
    if isinstance(panel, dict):
        degree_max = max(panel)
        blocks = {ell: _series_block(panel[ell]) for ell in panel}
        missing = [ell for ell in range(degree_max + 1) if ell not in blocks]
        if missing:
            raise ValueError(f"panel mapping is missing multipoles {missing}")
        n = blocks[0].shape[1]
        return (lambda ell: blocks[ell]), degree_max, n
    raise TypeError("panel must be a CoefficientPanel or a mapping ell -> series block")


def estimate_kernel(panel, policy: TruncationPolicy, order: int) -> KernelEstimate:
    """Fit every multipole up to the policy's truncation level."""
    series, degree_max, n = _panel_accessor(panel)
    check_positive_int("order", order)
    if n <= order:
        raise ValueError("series length must exceed the order")
    level = policy.level_for(n - order)
    if level > degree_max:
        raise ValueError(
            f"policy requires multipoles up to {level} but the panel stops at {degree_max}"
        )
    fits = tuple(fit_multipole(series(ell), order, ell=ell) for ell in range(level + 1))
    return KernelEstimate(
        order=order,
        truncation_level=level,
        fits=fits,
        n_steps=n,
        n_effective=n - order,
    )


def eval_estimate(estimate: KernelEstimate, z) -> np.ndarray:
    """Functional alias for KernelEstimate.evaluate."""
    return estimate.evaluate(z)


class PluginBandwidth(NamedTuple):
    beta_hat: float
    d_star: float


def plugin_bandwidth(ells, values, variant: str = "demeaned") -> PluginBandwidth:
    """Decay-rate and bandwidth plug-in from first-stage AR(1) fits.

    Fits log phi_hat_ell^2 ~ -2 beta log ell over the supplied multipoles.
    ``no_intercept`` regresses through the origin, -sum(log l * log phi^2) / (2 sum (log l)^2)
    (exact when the decay constant is 1); ``demeaned`` fits an intercept and
    reads beta from the slope.  Returns (beta_hat, d_star = 1/(2 beta_hat - 1)).
    """
    ells = np.asarray(ells, dtype=float)
    values = np.asarray(values, dtype=float)
    if ells.shape != values.shape or ells.ndim != 1 or ells.size < 2:
        raise ValueError("need matching 1-d arrays with at least two multipoles")
    if np.any(ells < 2):
        raise ValueError("plug-in regression uses multipoles ell >= 2")
    if np.any(values == 0.0):
        raise ValueError("zero coefficient estimates cannot enter the log regression")
    x = np.log(ells)
    y = np.log(values * values)
    if variant == "no_intercept":
        beta = -float(np.dot(x, y) / (2.0 * np.dot(x, x)))
    elif variant == "demeaned":
        slope = float(np.dot(x - x.mean(), y - y.mean()) / np.dot(x - x.mean(), x - x.mean()))
        beta = -slope / 2.0
    else:
        raise ValueError("variant must be 'no_intercept' or 'demeaned'")
    if beta <= 0.5:
        raise ValueError(f"estimated decay rate {beta:.4g} <= 1/2 leaves the bandwidth undefined")
    return PluginBandwidth(beta_hat=beta, d_star=1.0 / (2.0 * beta - 1.0))


class KernelRegressor(BaseEstimator):
    """Scikit-learn estimator facade over the per-multipole OLS kernel fit.

    Parameters
    ----------
    order : AR order p.
    truncation : TruncationPolicy, or an int (fixed level), or a (coeff,
        exponent) pair for the rate rule.

    After ``fit`` the instance exposes ``estimate_`` (the KernelEstimate),
    ``coef_`` (the (L_N + 1, p) table) and ``truncation_level_``; ``predict``
    evaluates the fitted kernel on points in [-1, 1].
    """

    def __init__(self, order: int = 1, truncation=TruncationPolicy.rate(1.0, 0.6)):
        self.order = order
        self.truncation = truncation

    def _policy(self) -> TruncationPolicy:
        if isinstance(self.truncation, TruncationPolicy):
            return self.truncation
        if isinstance(self.truncation, (int, np.integer)):
            return TruncationPolicy.fixed(int(self.truncation))
        if isinstance(self.truncation, (tuple, list)) and len(self.truncation) == 2:
            return TruncationPolicy.rate(*self.truncation)
        raise ValueError("truncation must be a TruncationPolicy, int, or (coeff, exponent)")

    def fit(self, X, y=None):
        self.estimate_ = estimate_kernel(X, self._policy(), self.order)
        self.coef_ = self.estimate_.coef_table()
        self.truncation_level_ = self.estimate_.truncation_level
        return self

    def predict(self, z) -> np.ndarray:
        if not hasattr(self, "estimate_"):
            raise RuntimeError("KernelRegressor must be fitted before predict")
        return self.estimate_.evaluate(np.asarray(z, dtype=float))


def write_estimate_csv(estimate: KernelEstimate, path, seed=None) -> None:
    """Export with metadata header lines and the fixed ``ell,j,phi_hat`` schema."""
    with open(path, "w", newline="") as handle:
        handle.write(f"# n = {estimate.n_steps}\n")
        handle.write(f"# N = {estimate.n_effective}\n")
        handle.write(f"# L_N = {estimate.truncation_level}\n")
        handle.write(f"# order = {estimate.order}\n")
        if seed is not None:
            handle.write(f"# seed = {seed}\n")
        handle.write("ell,j,phi_hat\n")
        for fit in estimate.fits:
            for j, value in enumerate(fit.coef, start=1):
                handle.write(f"{fit.ell},{j},{value:.17g}\n")
