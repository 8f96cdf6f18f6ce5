"""Experiment harnesses and theory diagnostics.

Monte Carlo replications are pure functions of (model, sizes, master seed,
replication index); they are dispatched over a process pool in fixed-size
chunks, so reports are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ._validation import check_locations, check_positive_int
from .estimate import SingularFitError, TruncationPolicy, fit_multipole
from .harmonics import legendre_table, ln_weight
from .model import SpharModel, kernel_eval, second_order
from .simulate import simulate_multipole

FOUR_PI = 4.0 * math.pi
SIXTEEN_PI_SQ = 16.0 * math.pi**2

__all__ = [
    "l2_error_decomposition",
    "truncation_bias",
    "sup_error",
    "MSERow",
    "MSEReport",
    "run_mse_experiment",
    "wasserstein_w1_normal",
    "standardized_samples",
    "CLTReport",
    "run_clt_experiment",
    "compute_vn",
    "LimitCovariance",
    "limit_covariance",
    "score_statistic_samples",
    "leading_term_samples",
    "write_mse_csv",
    "write_clt_csv",
]


# -- error decompositions -----------------------------------------------------


def truncation_bias(model: SpharModel, level: int) -> float:
    """Deterministic squared-L2 mass above the truncation level.

    sum_{level < ell <= degree_max} ||phi_ell||^2 (2 ell + 1) / (8 pi^2).
    """
    if level >= model.degree_max:
        return 0.0
    tail = model.phi[level + 1 :]
    ells = np.arange(level + 1, model.degree_max + 1)
    return float(np.sum(np.sum(tail * tail, axis=1) * (2.0 * ells + 1.0)) / (8.0 * math.pi**2))


def l2_error_decomposition(estimate, model: SpharModel):
    """Exact split of the squared L2 error into variance and bias terms.

    variance_term = sum_{ell <= L_N} ||phi_hat_ell - phi_ell||^2 (2l+1)/(8 pi^2);
    bias_term is the deterministic tail mass.  Their sum equals the integrated
    squared error of the fitted kernel (Legendre orthogonality kills the cross
    term identically, not just in expectation).
    """
    level = estimate.truncation_level
    if level > model.degree_max:
        raise ValueError("estimate truncation exceeds the model table")
    diff = estimate.coef_table() - model.phi[: level + 1]
    ells = np.arange(level + 1)
    variance = float(np.sum(np.sum(diff * diff, axis=1) * (2.0 * ells + 1.0)) / (8.0 * math.pi**2))
    return variance, truncation_bias(model, level)


def sup_error(estimate, model: SpharModel, grid_size: int = 2001) -> float:
    """Max Euclidean error of the fitted kernel over a uniform closed-interval grid."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    grid = np.linspace(-1.0, 1.0, grid_size)
    diff = estimate.evaluate(grid) - kernel_eval(model, grid)
    return float(np.max(np.linalg.norm(diff, axis=1)))


# -- replication plumbing -----------------------------------------------------


def _chunks(n_total: int, chunk: int):
    return [range(start, min(start + chunk, n_total)) for start in range(0, n_total, chunk)]


def _map_chunks(worker, payloads, workers: int):
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, payloads))
    return [worker(p) for p in payloads]


def _fit_coefs(model, level, n_steps, seed, rep):
    """Simulate multipoles 0..level and fit each; (level+1, p) coefficient table."""
    coefs = np.empty((level + 1, model.order))
    for ell in range(level + 1):
        block = simulate_multipole(model, ell, n_steps, seed, replication=rep)
        coefs[ell] = fit_multipole(block, model.order, ell=ell).coef
    return coefs


def _mse_chunk(payload):
    model, n_steps, level, seed, reps, grid, true_grid = payload
    ells = np.arange(level + 1)
    weight = (2.0 * ells + 1.0) / (8.0 * math.pi**2)
    table = legendre_table(grid, level)
    proj = table * ((2.0 * ells + 1.0) / FOUR_PI)
    out = np.empty((len(reps), 2))
    failed = np.zeros(len(reps), dtype=bool)
    for i, rep in enumerate(reps):
        try:
            coefs = _fit_coefs(model, level, n_steps, seed, rep)
        except SingularFitError:
            failed[i] = True
            out[i] = np.nan
            continue
        diff = coefs - model.phi[: level + 1]
        out[i, 0] = float(np.sum(np.sum(diff * diff, axis=1) * weight))
        grid_err = proj @ coefs - true_grid
        out[i, 1] = float(np.max(np.linalg.norm(grid_err, axis=1)))
    return out, failed


@dataclass(frozen=True)
class MSERow:
    n_effective: int
    variance: float
    bias: float
    mse: float
    sup_error: float
    failures: int


@dataclass(frozen=True)
class MSEReport:
    rows: tuple
    config: dict

    def as_array(self) -> np.ndarray:
        return np.array(
            [[r.n_effective, r.variance, r.bias, r.mse, r.sup_error, r.failures] for r in self.rows]
        )


def run_mse_experiment(
    model: SpharModel,
    n_effective_list,
    policy: TruncationPolicy,
    B: int,
    seed: int,
    workers: int = 1,
    grid_size: int = 2001,
) -> MSEReport:
    """Monte Carlo table of variance/bias/MSE/sup-error rows, one per sample size.

    For each N the harness simulates B independent panels of length n = N + p,
    fits up to the policy's truncation level, and averages the exact error
    decomposition.  Replication r of the idx-th N uses substream replication
    index idx * B + r, so all cells are mutually independent.
    """
    check_positive_int("B", B)
    grid = np.linspace(-1.0, 1.0, grid_size)
    true_grid = kernel_eval(model, grid)
    rows = []
    chunk = max(1, -(-B // 64))
    for idx, n_eff in enumerate(n_effective_list):
        check_positive_int("N", n_eff)
        level = policy.level_for(n_eff)
        if level > model.degree_max:
            raise ValueError(f"policy needs multipoles up to {level}; model stops at {model.degree_max}")
        n_steps = n_eff + model.order
        payloads = [
            (model, n_steps, level, seed, [idx * B + r for r in block], grid, true_grid)
            for block in _chunks(B, chunk)
        ]
        results = _map_chunks(_mse_chunk, payloads, workers)
        values = np.concatenate([r[0] for r in results])
        failed = np.concatenate([r[1] for r in results])
        ok = values[~failed]
        variance = float(np.mean(ok[:, 0]))
        bias = truncation_bias(model, level)
        rows.append(
            MSERow(
                n_effective=n_eff,
                variance=variance,
                bias=bias,
                mse=variance + bias,
                sup_error=float(np.mean(ok[:, 1])),
                failures=int(np.sum(failed)),
            )
        )
    config = {
        "B": B,
        "seed": seed,
        "policy": policy,
        "n_effective": list(n_effective_list),
        "model_hash": model.content_hash(),
    }
    return MSEReport(rows=tuple(rows), config=config)


# -- Wasserstein distance to the standard normal ------------------------------


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def wasserstein_w1_normal(sample) -> float:
    """Exact W1 distance between an empirical measure and the standard normal.

    Integrates |F_n(x) - Phi(x)| in closed form on every segment between
    sorted sample points (the antiderivative of Phi is x Phi(x) + phi(x)),
    including both Gaussian tails, with the single crossing per segment
    located by the normal quantile function.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size == 0:
        raise ValueError("sample must be nonempty")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample values must be finite")
    n = x.size
    anti = x * ndtr(x) + _norm_pdf(x)  # antiderivative of Phi, -> 0 at -inf
    total = float(anti[0])  # left tail: integral of Phi up to x[0]
    total += float(_norm_pdf(x[-1]) - x[-1] * (1.0 - ndtr(x[-1])))  # right tail
    if n > 1:
        a, b = x[:-1], x[1:]
        c = np.arange(1, n) / n
        cross = ndtri(c)
        ia, ib = anti[:-1], anti[1:]
        below = c * (b - a) - (ib - ia)  # if Phi <= c on the whole segment
        above = (ib - ia) - c * (b - a)  # if Phi >= c on the whole segment
        anti_q = cross * c + _norm_pdf(cross)
        split = c * (cross - a) - (anti_q - ia) + (ib - anti_q) - c * (b - cross)
        segment = np.where(cross <= a, above, np.where(cross >= b, below, split))
        total += float(np.sum(segment))
    return total


# -- standardized CLT statistics ----------------------------------------------


def _clt_chunk(payload):
    model, n_steps, level, seed, reps, locations, true_values = payload
    table = legendre_table(locations, level)
    proj = table * ((2.0 * np.arange(level + 1) + 1.0) / FOUR_PI)
    scale = np.sqrt((n_steps - model.order) / ln_weight(locations, level))
    out = np.empty((len(reps), locations.size, model.order))
    failed = np.zeros(len(reps), dtype=bool)
    for i, rep in enumerate(reps):
        try:
            coefs = _fit_coefs(model, level, n_steps, seed, rep)
        except SingularFitError:
            failed[i] = True
            out[i] = np.nan
            continue
        out[i] = scale[:, None] * (proj @ coefs - true_values)
    return out, failed


def standardized_samples(
    model: SpharModel,
    n_effective: int,
    policy: TruncationPolicy,
    locations,
    B: int,
    seed: int,
    workers: int = 1,
    rep_offset: int = 0,
):
    """Monte Carlo samples of sqrt(N / L_N(z_i)) (k_hat(z_i) - k(z_i)).

    Returns (samples, failures): samples has shape (B_ok, m, p) with failed
    replications (singular fits) dropped and counted.
    """
    check_positive_int("B", B)
    locations = check_locations(locations)
    level = policy.level_for(n_effective)
    if level > model.degree_max:
        raise ValueError(f"policy needs multipoles up to {level}; model stops at {model.degree_max}")
    true_values = kernel_eval(model, locations)
    n_steps = n_effective + model.order
    chunk = max(1, -(-B // 64))
    payloads = [
        (model, n_steps, level, seed, [rep_offset + r for r in block], locations, true_values)
        for block in _chunks(B, chunk)
    ]
    results = _map_chunks(_clt_chunk, payloads, workers)
    samples = np.concatenate([r[0] for r in results])
    failed = np.concatenate([r[1] for r in results])
    return samples[~failed], int(np.sum(failed))


@dataclass(frozen=True)
class CLTReport:
    """Wasserstein-distance table plus the underlying standardized samples."""

    locations: np.ndarray
    n_effective: tuple
    order: int
    distances: np.ndarray  # (len(n_effective), m, p)
    samples: tuple  # per N: (B_ok, m, p)
    correlations: tuple  # per N: (m*p, m*p) empirical correlation matrix
    failures: tuple
    config: dict


def run_clt_experiment(
    model: SpharModel,
    n_effective_list,
    policy: TruncationPolicy,
    locations,
    B: int,
    seed: int,
    workers: int = 1,
) -> CLTReport:
    """Per (N, location, component) Wasserstein distances to the standard normal."""
    locations = check_locations(locations)
    distances = np.empty((len(n_effective_list), locations.size, model.order))
    all_samples, correlations, failures = [], [], []
    for idx, n_eff in enumerate(n_effective_list):
        samples, n_failed = standardized_samples(
            model,
            n_eff,
            policy,
            locations,
            B,
            seed,
            workers=workers,
            rep_offset=idx * B,
        )
        for i in range(locations.size):
            for j in range(model.order):
                distances[idx, i, j] = wasserstein_w1_normal(samples[:, i, j])
        flat = samples.reshape(samples.shape[0], -1)
        correlations.append(np.corrcoef(flat, rowvar=False))
        all_samples.append(samples)
        failures.append(n_failed)
    config = {
        "B": B,
        "seed": seed,
        "policy": policy,
        "n_effective": list(n_effective_list),
        "model_hash": model.content_hash(),
    }
    return CLTReport(
        locations=locations,
        n_effective=tuple(n_effective_list),
        order=model.order,
        distances=distances,
        samples=tuple(all_samples),
        correlations=tuple(correlations),
        failures=tuple(failures),
        config=config,
    )


# -- deterministic limit objects ----------------------------------------------


def _second_order_stack(model: SpharModel, level: int):
    """(noise ratios, inverse correlation matrices) for ell = 0..level."""
    p = model.order
    if p == 1:
        ratios = 1.0 - model.phi[: level + 1, 0] ** 2
        sinv = np.ones((level + 1, 1, 1))
        return ratios, sinv
    ratios = np.empty(level + 1)
    sinv = np.empty((level + 1, p, p))
    for ell in range(level + 1):
        so = second_order(model, ell)
        ratios[ell] = so.noise_ratio
        sinv[ell] = np.linalg.inv(so.sigma)
    return ratios, sinv


def compute_vn(model: SpharModel, n_effective: int, d: float, locations) -> np.ndarray:
    """Covariance V_N of the leading CLT term, an (m p) x (m p) block matrix.

    Block (i, j) is (L_N(z_i) L_N(z_j))^(-1/2) *
    sum_{ell <= L_N} (C_{ell;Z}/C_ell) Sigma_ell^{-1} (2l+1)/(16 pi^2) P_ell(z_i) P_ell(z_j)
    with L_N = floor(N^d).
    """
    locations = check_locations(locations)
    level = TruncationPolicy.rate(1.0, d).level_for(n_effective)
    if level > model.degree_max:
        raise ValueError(f"rate d={d} needs multipoles up to {level}; model stops at {model.degree_max}")
    p = model.order
    m = locations.size
    ratios, sinv = _second_order_stack(model, level)
    table = legendre_table(locations, level)
    weights = (2.0 * np.arange(level + 1) + 1.0) / SIXTEEN_PI_SQ
    norm = np.sqrt(ln_weight(locations, level))
    out = np.empty((m * p, m * p))
    for i in range(m):
        for j in range(i, m):
            coef = ratios * weights * table[i] * table[j]
            block = np.tensordot(coef, sinv, axes=1) / (norm[i] * norm[j])
            out[i * p : (i + 1) * p, j * p : (j + 1) * p] = block
            out[j * p : (j + 1) * p, i * p : (i + 1) * p] = block.T
    return out


@dataclass(frozen=True)
class LimitCovariance:
    z: float
    z_prime: float
    matrix: np.ndarray


def limit_covariance(model: SpharModel, z: float, z_prime: float) -> LimitCovariance:
    """Covariance of the sqrt(N)-scaled estimator limit for finite-expansion models.

    Gamma_k(z, z') = sum_{ell <= L} C_{ell;Z} Gamma_ell^{-1} (2l+1)/(16 pi^2) P_ell(z) P_ell(z').
    """
    p = model.order
    table = legendre_table(np.array([float(z), float(z_prime)]), model.degree_max)
    weights = (2.0 * np.arange(model.degree_max + 1) + 1.0) / SIXTEEN_PI_SQ
    total = np.zeros((p, p))
    for ell in range(model.degree_max + 1):
        so = second_order(model, ell)
        try:
            ginv = np.linalg.inv(so.gamma)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"autocovariance matrix at ell={ell} is singular") from exc
        total += float(model.noise_spectrum[ell]) * weights[ell] * table[0, ell] * table[1, ell] * ginv
    return LimitCovariance(z=float(z), z_prime=float(z_prime), matrix=total)


# -- score statistics and the leading CLT term --------------------------------


def _score_vector(model, ell, block, innovations, sinv_ell, spectrum_ell):
    """Sigma_ell^{-1} X' eps / (C_ell sqrt(N (2 ell + 1))) from one slice."""
    p = model.order
    n = block.shape[1]
    n_eff = n - p
    raw = np.empty(p)
    for j in range(1, p + 1):
        raw[j - 1] = np.einsum("mt,mt->", block[:, p - j : n - j], innovations)
    raw /= spectrum_ell * math.sqrt(n_eff * (2 * ell + 1))
    return sinv_ell @ raw


def _score_chunk(payload):
    model, ell, n_steps, seed, reps, sinv_ell, spectrum_ell = payload
    out = np.empty((len(reps), model.order))
    for i, rep in enumerate(reps):
        block, innov = simulate_multipole(
            model, ell, n_steps, seed, replication=rep, keep_innovations=True
        )
        out[i] = _score_vector(model, ell, block, innov, sinv_ell, spectrum_ell)
    return out


def score_statistic_samples(
    model: SpharModel, ell: int, n_effective: int, B: int, seed: int, workers: int = 1
) -> np.ndarray:
    """Samples of the normalized score Sigma_ell^{-1} B_{ell;N}, shape (B, p).

    Uses the true innovations retained from simulation, so the statistic is
    exactly the second-order chaos object whose cumulants the theory tracks.
    """
    check_positive_int("B", B)
    so = second_order(model, ell)
    sinv = np.linalg.inv(so.sigma)
    spectrum = float(so.autocov[0])
    n_steps = n_effective + model.order
    chunk = max(1, -(-B // 64))
    payloads = [
        (model, ell, n_steps, seed, list(block), sinv, spectrum) for block in _chunks(B, chunk)
    ]
    results = _map_chunks(_score_chunk, payloads, workers)
    return np.concatenate(results)


def _leading_chunk(payload):
    model, level, n_steps, seed, reps, locations, sinv, spectrum = payload
    p = model.order
    table = legendre_table(locations, level)
    weights = np.sqrt(2.0 * np.arange(level + 1) + 1.0) / FOUR_PI
    norm = np.sqrt(ln_weight(locations, level))
    out = np.zeros((len(reps), locations.size, p))
    for i, rep in enumerate(reps):
        for ell in range(level + 1):
            block, innov = simulate_multipole(
                model, ell, n_steps, seed, replication=rep, keep_innovations=True
            )
            score = _score_vector(model, ell, block, innov, sinv[ell], spectrum[ell])
            out[i] += np.outer(table[:, ell] * weights[ell], score)
        out[i] /= norm[:, None]
    return out


def leading_term_samples(
    model: SpharModel,
    n_effective: int,
    level: int,
    locations,
    B: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Samples of the leading CLT term U_N(z), shape (B, m, p).

    U_N(z) = L_N(z)^(-1/2) sum_{ell <= level} Sigma_ell^{-1} B_{ell;N}
    sqrt(2 ell + 1)/(4 pi) P_ell(z); its covariance is compute_vn's V_N.
    """
    check_positive_int("B", B)
    locations = check_locations(locations)
    if level > model.degree_max:
        raise ValueError("level exceeds the model table")
    _, sinv = _second_order_stack(model, level)
    spectrum = model.spectrum()[: level + 1]
    n_steps = n_effective + model.order
    chunk = max(1, -(-B // 64))
    payloads = [
        (model, level, n_steps, seed, list(block), locations, sinv, spectrum)
        for block in _chunks(B, chunk)
    ]
    results = _map_chunks(_leading_chunk, payloads, workers)
    return np.concatenate(results)


# -- CSV reports ---------------------------------------------------------------


def write_mse_csv(report: MSEReport, path) -> None:
    """Fixed schema ``N,variance,bias,mse,sup_error,failures`` with %.5f cells."""
    with open(path, "w", newline="") as handle:
        handle.write("N,variance,bias,mse,sup_error,failures\n")
        for row in report.rows:
            handle.write(
                f"{row.n_effective},{row.variance:.5f},{row.bias:.5f},"
                f"{row.mse:.5f},{row.sup_error:.5f},{row.failures}\n"
            )


def write_clt_csv(report: CLTReport, path, raw_path=None) -> None:
    """Fixed schema ``N,z,component,wasserstein``; %.2f table plus %.6f raw companion."""
    def rows(fmt):
        lines = ["N,z,component,wasserstein"]
        for idx, n_eff in enumerate(report.n_effective):
            for i, z in enumerate(report.locations):
                for j in range(report.order):
                    lines.append(f"{n_eff},{z:g},{j + 1},{report.distances[idx, i, j]:{fmt}}")
        return "\n".join(lines) + "\n"

    with open(path, "w", newline="") as handle:
        handle.write(rows(".2f"))
    if raw_path is not None:
        with open(raw_path, "w", newline="") as handle:
            handle.write(rows(".6f"))
