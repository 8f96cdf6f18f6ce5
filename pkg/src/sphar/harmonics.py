"""Legendre polynomials, real spherical harmonics, and quadrature rules.

Everything in this module is a pure function of its inputs.  The returned
containers are frozen and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_interval, check_nonnegative_int, check_positive_int

FOUR_PI = 4.0 * math.pi

__all__ = [
    "LegendreBatch",
    "HarmonicTable",
    "QuadratureRule",
    "legendre_all",
    "legendre_table",
    "ln_weight",
    "real_sph_harmonics",
    "gauss_nodes",
    "sphere_product_rule",
    "hilb_ratio",
    "legendre_cross_term",
]


@dataclass(frozen=True)
class LegendreBatch:
    """Values P_0(z), ..., P_L(z) at a single point z in [-1, 1]."""

    degree_max: int
    point: float
    values: np.ndarray


@dataclass(frozen=True)
class HarmonicTable:
    """Real orthonormal spherical harmonics at one direction.

    ``values[ell]`` is the length ``2*ell + 1`` vector of Y_{ell,m}, ordered
    m = -ell, ..., ell.
    """

    degree_max: int
    theta: float
    phi: float
    values: tuple

    def __getitem__(self, ell: int) -> np.ndarray:
        return self.values[ell]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 2*order - 1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, fn) -> float:
        return float(np.dot(self.weights, fn(self.nodes)))


def legendre_table(z, degree_max: int) -> np.ndarray:
    """Legendre polynomial table by the upward three-term recurrence.

    Parameters
    ----------
    z : array_like
        Points in [-1, 1].
    degree_max : int
        Highest degree L, inclusive.

    Returns
    -------
    ndarray of shape (len(z), degree_max + 1) with entry [i, ell] = P_ell(z_i).

    Notes
    -----
    Uses (ell+1) P_{ell+1} = (2 ell + 1) z P_ell - ell P_{ell-1}, which is
    forward-stable on [-1, 1] where |P_ell| <= 1; degrees up to at least 1e5
    are fine in double precision.
    """
    check_nonnegative_int("degree_max", degree_max)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1:
        raise ValueError("z must be a scalar or 1-d array")
    check_interval("z", z, -1.0, 1.0)
    out = np.empty((z.size, degree_max + 1))
    out[:, 0] = 1.0
    if degree_max >= 1:
        out[:, 1] = z
    for ell in range(1, degree_max):
        out[:, ell + 1] = (
            (2 * ell + 1) * z * out[:, ell] - ell * out[:, ell - 1]
        ) / (ell + 1)
    return out


def legendre_all(z: float, degree_max: int) -> LegendreBatch:
    """Evaluate P_0(z), ..., P_L(z) at a single point.

    Raises a domain error for z outside [-1, 1].
    """
    z = float(z)
    values = legendre_table(z, degree_max)[0]
    return LegendreBatch(degree_max=degree_max, point=z, values=values)


def ln_weight(z, level: int):
    """Truncated squared-Legendre weight sum_{ell<=level} (2 ell + 1) / (16 pi^2) P_ell(z)^2.

    This is the pointwise normalization used to standardize kernel estimates;
    at z = +-1 it equals (level + 1)^2 / (16 pi^2) exactly, and for fixed
    z in (-1, 1) it grows like 2 * level / (pi * sqrt(1 - z^2) * 16 pi^2).

    Accepts a scalar or 1-d array of points; returns a matching scalar/array.
    """
    check_nonnegative_int("level", level)
    scalar = np.isscalar(z) or getattr(z, "ndim", 0) == 0
    table = legendre_table(z, level)
    weights = 2.0 * np.arange(level + 1) + 1.0
    total = (table * table) @ weights / (16.0 * math.pi**2)
    return float(total[0]) if scalar else total


def _normalized_assoc_legendre(theta: float, degree_max: int) -> np.ndarray:
    """Orthonormalized associated Legendre values at cos(theta).

    Returns a (L+1, L+1) lower-triangular-ish array ``P[ell, m]`` holding
    sqrt((2 ell + 1)/(4 pi) * (ell-m)!/(ell+m)!) * P_ell^m(cos theta) with the
    Condon-Shortley phase.  The diagonal-then-upward recurrence keeps every
    entry normalized, so there is no overflow for large degrees.
    """
    x = math.cos(theta)
    # exact pole limit: only m = 0 survives at theta = 0 or pi
    s = 0.0 if theta in (0.0, math.pi) else math.sin(theta)
    table = np.zeros((degree_max + 1, degree_max + 1))
    table[0, 0] = math.sqrt(1.0 / FOUR_PI)
    for m in range(1, degree_max + 1):
        table[m, m] = -math.sqrt(1.0 + 0.5 / m) * s * table[m - 1, m - 1]
    for m in range(degree_max + 1):
        for ell in range(m + 1, degree_max + 1):
            a = math.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
            prev = table[ell - 2, m] if ell >= m + 2 else 0.0
            b = 0.0
            if ell >= m + 2:
                b = math.sqrt((4.0 * (ell - 1) ** 2 - 1.0) / ((ell - 1) ** 2 - m * m))
                prev = prev / b
            table[ell, m] = a * (x * table[ell - 1, m] - prev)
    return table


def real_sph_harmonics(theta: float, phi: float, degree_max: int) -> HarmonicTable:
    """Real orthonormal spherical harmonics Y_{ell,m}(theta, phi) for ell <= degree_max.

    Convention: m = 0 is the orthonormalized Legendre term, m > 0 carries
    sqrt(2) * cos(m phi), m < 0 carries sqrt(2) * sin(|m| phi).  The basis
    satisfies the addition formula
    sum_m Y_{ell,m}(x) Y_{ell,m}(y) = (2 ell + 1)/(4 pi) P_ell(<x, y>).
    """
    check_nonnegative_int("degree_max", degree_max)
    theta = float(theta)
    phi = float(phi)
    check_interval("theta", theta, 0.0, math.pi)
    if not 0.0 <= phi < 2.0 * math.pi:
        raise ValueError(f"phi must lie in [0, 2*pi); got {phi}")
    assoc = _normalized_assoc_legendre(theta, degree_max)
    ms = np.arange(1, degree_max + 1)
    cos_m = math.sqrt(2.0) * np.cos(ms * phi)
    sin_m = math.sqrt(2.0) * np.sin(ms * phi)
    rows = []
    for ell in range(degree_max + 1):
        row = np.empty(2 * ell + 1)
        row[ell] = assoc[ell, 0]
        if ell > 0:
            row[ell + 1 :] = assoc[ell, 1 : ell + 1] * cos_m[:ell]
            row[:ell] = (assoc[ell, 1 : ell + 1] * sin_m[:ell])[::-1]
        rows.append(row)
    return HarmonicTable(degree_max=degree_max, theta=theta, phi=phi, values=tuple(rows))


def gauss_nodes(order: int) -> QuadratureRule:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    check_positive_int("order", order)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return QuadratureRule(order=order, nodes=nodes, weights=weights)


def sphere_product_rule(polar_order: int, n_azimuth: int):
    """Product quadrature over the sphere: Gauss-Legendre in cos(theta), uniform in phi.

    Returns (theta, phi, weights) flat arrays; sum(weights * f(theta, phi))
    approximates the surface integral of f, exactly for integrands that are
    polynomial of degree < 2*polar_order in cos(theta) and trigonometric of
    degree < n_azimuth in phi.
    """
    rule = gauss_nodes(polar_order)
    thetas = np.arccos(rule.nodes)
    phis = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    theta_grid = np.repeat(thetas, n_azimuth)
    phi_grid = np.tile(phis, polar_order)
    w = np.repeat(rule.weights, n_azimuth) * (2.0 * math.pi / n_azimuth)
    return theta_grid, phi_grid, w


def hilb_ratio(theta: float, degree_max: int) -> float:
    """Ratio of (1/(L+1)) sum_{ell<=L} (2 ell + 1) P_ell^2(cos theta) to its limit 2/(pi sin theta)."""
    if not 0.0 < theta < math.pi:
        raise ValueError("theta must lie strictly inside (0, pi)")
    table = legendre_table(math.cos(theta), degree_max)[0]
    weights = 2.0 * np.arange(degree_max + 1) + 1.0
    mean = float(np.dot(weights, table * table)) / (degree_max + 1)
    return mean / (2.0 / (math.pi * math.sin(theta)))


def legendre_cross_term(theta: float, theta_prime: float, degree_max: int) -> float:
    """Averaged cross product (1/(L+1)) sum_{ell<=L} (2 ell + 1) P_ell(cos theta) P_ell(cos theta').

    Decays like log(L)/L for distinct interior angles.
    """
    points = np.array([math.cos(theta), math.cos(theta_prime)])
    table = legendre_table(points, degree_max)
    weights = 2.0 * np.arange(degree_max + 1) + 1.0
    return float(np.dot(weights, table[0] * table[1])) / (degree_max + 1)
