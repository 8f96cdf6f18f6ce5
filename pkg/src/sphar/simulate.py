"""Exact-stationary simulation of harmonic coefficient panels.

Every (multipole, order, replication) series draws from its own RNG substream,
derived from the master seed by a fixed 64-bit mix (see ``substream_seed``).
Output therefore never depends on evaluation order, worker count, or which
subset of multipoles is materialized.

Draw layout per (ell, m, replication) stream, in order:
  * ``stationary`` init: p standard normals (start vector), then n - p
    standard normals (innovations);
  * ``burn-in`` init: burn_in + n - p standard normals (innovations only).
Standard normals come from numpy's PCG64/ziggurat generator and are scaled by
sqrt(C_{ell;Z}) afterwards, so rescaling the noise spectrum by an exact power
of two rescales every sample exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import lfilter

from ._validation import check_nonnegative_int, check_positive_int
from .harmonics import real_sph_harmonics
from .model import ModelError, SpharModel, autocovariances

__all__ = [
    "substream_seed",
    "SimulationPlan",
    "CoefficientPanel",
    "simulate_multipole",
    "simulate_panel",
    "synthesize_field",
    "write_panel_csv",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def substream_seed(master_seed: int, ell: int, m: int, replication: int = 0) -> int:
    """64-bit stream seed for the series at (ell, m) in a given replication.

    splitmix64 applied to the running state xor'ed with, in turn, ell,
    m + ell (so the nonnegative m-index is used), and the replication index.
    """
    if not -ell <= m <= ell:
        raise ValueError(f"m must lie in -ell..ell; got m={m}, ell={ell}")
    state = _splitmix64(master_seed & _MASK64)
    for value in (ell, m + ell, replication):
        state = _splitmix64(state ^ (value & _MASK64))
    return state


@dataclass(frozen=True)
class SimulationPlan:
    """What to simulate: model, length, degree cut, seed, and initialization."""

    model: SpharModel
    n_steps: int
    seed: int
    degree_max: int | None = None  # defaults to the model table
    init: str = "stationary"  # "stationary" | "burn-in"
    burn_in: int | None = None  # defaults to 100 * order

    def __post_init__(self):
        check_positive_int("n_steps", self.n_steps)
        if self.n_steps <= self.model.order:
            raise ValueError("n_steps must exceed the model order")
        degree = self.model.degree_max if self.degree_max is None else self.degree_max
        check_nonnegative_int("degree_max", degree)
        if degree > self.model.degree_max:
            raise ValueError("simulation degree_max cannot exceed the model table")
        object.__setattr__(self, "degree_max", degree)
        if self.init not in ("stationary", "burn-in"):
            raise ValueError("init must be 'stationary' or 'burn-in'")
        burn = 100 * self.model.order if self.burn_in is None else self.burn_in
        check_nonnegative_int("burn_in", burn)
        object.__setattr__(self, "burn_in", burn)


@dataclass(frozen=True)
class CoefficientPanel:
    """Simulated harmonic coefficients a_{ell,m}(t), t = 1..n.

    ``series(ell)`` returns the (2 ell + 1, n) block with rows ordered
    m = -ell..ell; ``innovations(ell)`` (when retained) returns the matching
    (2 ell + 1, n - p) innovation block for t = p+1..n.
    """

    degree_max: int
    n_steps: int
    order: int
    seed: int
    model_hash: str
    blocks: tuple
    innovation_blocks: tuple | None = None

    def series(self, ell: int) -> np.ndarray:
        return self.blocks[ell]

    def innovations(self, ell: int) -> np.ndarray:
        if self.innovation_blocks is None:
            raise ValueError("panel was simulated without keep_innovations=True")
        return self.innovation_blocks[ell]

    def value(self, ell: int, m: int, t: int) -> float:
        return float(self.blocks[ell][m + ell, t - 1])


def _ar_filter(phi: np.ndarray, start: np.ndarray, innovations: np.ndarray) -> np.ndarray:
    """Run a(t) = sum_j phi_j a(t-j) + eps(t) with a prescribed start block.

    ``start`` is (n_series, p); ``innovations`` is (n_series, N).  The first p
    filter inputs are solved so the zero-state filter reproduces the start
    values, then one lfilter call produces the whole series.
    """
    p = phi.size
    n_series = start.shape[0]
    if not np.any(phi):
        return np.concatenate([start, innovations], axis=1)
    inputs = np.concatenate([np.zeros_like(start), innovations], axis=1)
    for t in range(p):
        lags = start[:, max(t - p, 0) : t][:, ::-1]
        inputs[:, t] = start[:, t] - lags @ phi[: lags.shape[1]]
    denom = np.concatenate([[1.0], -phi])
    return lfilter([1.0], denom, inputs, axis=1)


def simulate_multipole(
    model: SpharModel,
    ell: int,
    n_steps: int,
    seed: int,
    replication: int = 0,
    init: str = "stationary",
    burn_in: int | None = None,
    keep_innovations: bool = False,
):
    """Simulate the (2 ell + 1, n) coefficient block at one multipole.

    With ``init='stationary'`` the first p values are drawn jointly from
    N(0, Gamma_ell) via the Cholesky factor of Gamma_ell / C_{ell;Z}, so the
    series is stationary from t = 1.  Returns the block, or a (block,
    innovations) pair when ``keep_innovations`` is set.
    """
    if not 0 <= ell <= model.degree_max:
        raise ModelError(f"multipole {ell} outside model range 0..{model.degree_max}")
    p = model.order
    if n_steps <= p:
        raise ValueError("n_steps must exceed the model order")
    phi = model.phi[ell]
    c_z = float(model.noise_spectrum[ell])
    sqrt_cz = math.sqrt(c_z)
    n_series = 2 * ell + 1
    n_innov = n_steps - p

    if init == "stationary":
        # scale-free Toeplitz factor: Gamma_ell = c_z * (Gamma_ell / c_z)
        base = autocovariances(phi, 1.0, p - 1 if p > 1 else 0)
        try:
            chol = np.linalg.cholesky(toeplitz(base[:p]))
        except np.linalg.LinAlgError as exc:  # unreachable for validated models
            raise ModelError(f"stationary start covariance at ell={ell} is not PD") from exc
        starts = np.empty((n_series, p))
        innov = np.empty((n_series, n_innov))
        for m_index in range(n_series):
            rng = np.random.Generator(
                np.random.PCG64(substream_seed(seed, ell, m_index - ell, replication))
            )
            starts[m_index] = chol @ rng.standard_normal(p)
            innov[m_index] = rng.standard_normal(n_innov)
        starts *= sqrt_cz
        innov *= sqrt_cz
        block = _ar_filter(phi, starts, innov)
    elif init == "burn-in":
        burn = 100 * p if burn_in is None else burn_in
        total = burn + n_steps - p
        innov = np.empty((n_series, total))
        for m_index in range(n_series):
            rng = np.random.Generator(
                np.random.PCG64(substream_seed(seed, ell, m_index - ell, replication))
            )
            innov[m_index] = rng.standard_normal(total)
        innov *= sqrt_cz
        full = _ar_filter(phi, np.zeros((n_series, p)), innov)
        block = full[:, burn:]
        innov = innov[:, burn:]
    else:
        raise ValueError("init must be 'stationary' or 'burn-in'")

    if keep_innovations:
        return block, innov
    return block


def simulate_panel(
    plan: SimulationPlan, keep_innovations: bool = False, workers: int = 1
) -> CoefficientPanel:
    """Simulate all multipoles of a plan into a materialized panel.

    ``workers`` parallelizes across multipoles; the result is bit-identical
    for any worker count because each series has its own substream.
    """
    model = plan.model

    def one(ell):
        return simulate_multipole(
            model,
            ell,
            plan.n_steps,
            plan.seed,
            init=plan.init,
            burn_in=plan.burn_in,
            keep_innovations=True,
        )

    ells = range(plan.degree_max + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ells))
    else:
        results = [one(ell) for ell in ells]
    blocks = tuple(block for block, _ in results)
    for ell, block in enumerate(blocks):
        if not np.all(np.isfinite(block)):
            raise ModelError(f"non-finite values simulated at ell={ell}")
    return CoefficientPanel(
        degree_max=plan.degree_max,
        n_steps=plan.n_steps,
        order=model.order,
        seed=plan.seed,
        model_hash=model.content_hash(),
        blocks=blocks,
        innovation_blocks=tuple(innov for _, innov in results) if keep_innovations else None,
    )


def synthesize_field(panel: CoefficientPanel, t: int, directions) -> np.ndarray:
    """Field values T_t(x_i) = sum_{ell,m} a_{ell,m}(t) Y_{ell,m}(x_i).

    ``directions`` is a sequence of (theta, phi) pairs; ``t`` is 1-based.
    """
    if not 1 <= t <= panel.n_steps:
        raise ValueError(f"t must lie in 1..{panel.n_steps}")
    column = [panel.series(ell)[:, t - 1] for ell in range(panel.degree_max + 1)]
    out = np.empty(len(directions))
    for i, (theta, phi) in enumerate(directions):
        table = real_sph_harmonics(theta, phi, panel.degree_max)
        out[i] = sum(float(np.dot(column[ell], table[ell])) for ell in range(panel.degree_max + 1))
    return out


def write_panel_csv(panel: CoefficientPanel, path) -> None:
    """Panel export with the fixed schema ``ell,m,t,value`` (%.17g values)."""
    with open(path, "w", newline="") as handle:
        handle.write("ell,m,t,value\n")
        for ell in range(panel.degree_max + 1):
            block = panel.series(ell)
            for m in range(-ell, ell + 1):
                row = block[m + ell]
                for t in range(1, panel.n_steps + 1):
                    handle.write(f"{ell},{m},{t},{row[t - 1]:.17g}\n")
