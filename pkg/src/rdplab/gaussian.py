"""Closed-form rate curves for unit-variance Gaussian sources under exact
output-distribution matching, plus Monte Carlo verification of the bivariate
construction.

Squared-error distortion throughout; rates in bits.  The common-randomness
budget ``r_c`` may be ``math.inf`` (treated as a distinguished value, not a
large float).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.random import Generator, Philox

RHO_RESIDUAL_TOL = 1e-12


def _check_delta(delta: float, hi: float = 2.0) -> None:
    # the upper limit may itself carry float rounding (e.g. 2 - 2|eta|)
    if not (0.0 < delta <= hi + 1e-9):
        raise ValueError(f"delta must be in (0, {hi}], got {delta}")


def solve_rho(delta: float, r_c: float) -> float:
    """Correlation rho between source and reconstruction at distortion
    ``delta`` and common-randomness rate ``r_c``.

    rho solves  1 - delta/2 = rho * sqrt(1 - 2^(-2 r_c) (1 - rho^2)).
    Closed form via the equivalent quadratic in rho^2, then a Newton polish.
    """
    _check_delta(delta)
    if r_c < 0:
        raise ValueError("r_c must be nonnegative")
    if math.isinf(r_c):
        return 1.0 - delta / 2.0
    k = 2.0 ** (2.0 * r_c)
    # 2 rho^2 + (k - 1) = sqrt((k - 1)^2 + k (2 - delta)^2)
    rho2 = 0.5 * (math.sqrt((k - 1.0) ** 2 + k * (2.0 - delta) ** 2) - (k - 1.0))
    rho = math.sqrt(max(rho2, 0.0))
    target = 1.0 - delta / 2.0
    for _ in range(50):
        inner = 1.0 - (1.0 - rho * rho) / k
        f = rho * math.sqrt(inner) - target
        if abs(f) < 1e-16:
            break
        df = math.sqrt(inner) + rho * rho / (k * math.sqrt(inner))
        rho -= f / df
    return rho


def rho_residual(rho: float, delta: float, r_c: float) -> float:
    """Defining-equation residual for solve_rho (0 at the exact root)."""
    if math.isinf(r_c):
        return rho - (1.0 - delta / 2.0)
    k = 2.0 ** (2.0 * r_c)
    return rho * math.sqrt(1.0 - (1.0 - rho * rho) / k) - (1.0 - delta / 2.0)


def rate_normal(delta: float, r_c: float) -> float:
    """Minimum rate for a standard normal source whose reconstruction must
    itself be standard normal, at distortion ``delta`` and CR rate ``r_c``.

    R = (1/2) log2 (1 / (1 - rho^2)).  Special cases:
    r_c = 0   ->  (1/2) log2 (2 / delta)
    r_c = inf ->  (1/2) log2 (1 / (delta (1 - delta/4)))
    """
    rho = solve_rho(delta, r_c)
    one_minus = (1.0 - rho) * (1.0 + rho)
    if one_minus <= 0.0:
        return math.inf
    return 0.5 * math.log2(1.0 / one_minus)


def rate_bivariate(delta: float, eta: float) -> float:
    """Minimum rate with jointly normal side information (correlation eta)
    at both terminals, unlimited common randomness, distortion ``delta``.

    Valid for eta in (-1, 1) and delta in (0, 2 - 2|eta|];
    R = (1/2) log2 ((1 - eta^2) / (1 - rho^2)) with rho = 1 - delta/2.
    """
    if not (-1.0 < eta < 1.0):
        raise ValueError("eta must be in (-1, 1)")
    _check_delta(delta, hi=2.0 - 2.0 * abs(eta))
    rho = 1.0 - delta / 2.0
    return 0.5 * math.log2((1.0 - eta * eta) / ((1.0 - rho) * (1.0 + rho)))


def aux_b(rho: float, eta: float) -> float:
    """Mixing coefficient of the auxiliary variable in the bivariate
    construction: b = sqrt((rho^2 - eta^2) / (1 + eta^2 rho^2 - 2 eta^2))."""
    num = rho * rho - eta * eta
    den = 1.0 + eta * eta * rho * rho - 2.0 * eta * eta
    if num < -1e-9 or den <= 0.0:
        raise ValueError(f"invalid (rho, eta) = ({rho}, {eta})")
    return math.sqrt(max(num, 0.0) / den)


def conditional_gaussian(mean, cov, observed_idx, observed_values):
    """Conditional mean and covariance of the unobserved coordinates of a
    multivariate normal given exact values of the observed ones."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    obs = list(observed_idx)
    rest = [i for i in range(n) if i not in obs]
    vals = np.asarray(observed_values, dtype=float)
    if not obs:
        return mean.copy(), cov.copy()
    s11 = cov[np.ix_(rest, rest)]
    s12 = cov[np.ix_(rest, obs)]
    s22 = cov[np.ix_(obs, obs)]
    gain = s12 @ np.linalg.inv(s22)
    c_mean = mean[rest] + gain @ (vals - mean[obs])
    c_cov = s11 - gain @ s12.T
    return c_mean, c_cov


def standard_normals(seed: int, stream: int, count: int) -> np.ndarray:
    """Deterministic standard normals from a counter-based generator
    (Philox keyed by (seed, stream)) via the Box-Muller transform."""
    rng = Generator(Philox(key=(np.uint64(seed) << np.uint64(32)) + np.uint64(stream)))
    half = (count + 1) // 2
    u1 = rng.random(half)
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log1p(-u1))  # u1 in [0,1) -> 1-u1 in (0,1]
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:count]


def mc_verify_bivariate(
    eta: float,
    delta: float,
    n_samples: int = 1_000_000,
    seed: int = 0,
    n_streams: int = 8,
) -> dict:
    """Simulate the bivariate construction and report plug-in estimates.

    (Z, X, V) are built from independent standard normals; the decoder output
    is Y = rho^{-1} E[X | Z, V].  Returns empirical rho^2, distortion, the
    side-information correlation, and the plug-in rate.
    """
    if not (-1.0 < eta < 1.0):
        raise ValueError("eta must be in (-1, 1)")
    _check_delta(delta, hi=2.0 - 2.0 * abs(eta))
    rho = 1.0 - delta / 2.0
    b = aux_b(rho, eta)

    sum_rho2 = sum_dist = sum_xz = 0.0
    per = [n_samples // n_streams] * n_streams
    per[-1] += n_samples - sum(per)
    den = 1.0 - eta * eta * b * b
    for s, cnt in enumerate(per):
        base = standard_normals(seed, 3 * s, cnt)
        zt = standard_normals(seed, 3 * s + 1, cnt)
        vt = standard_normals(seed, 3 * s + 2, cnt)
        x = base
        z = eta * base + math.sqrt(1.0 - eta * eta) * zt
        v = b * base + math.sqrt(1.0 - b * b) * vt
        est = (eta * (1.0 - b * b) * z + b * (1.0 - eta * eta) * v) / den
        y = est / rho if rho > 0 else np.zeros_like(est)
        sum_rho2 += float((est * est).sum())
        sum_dist += float(((x - y) ** 2).sum())
        sum_xz += float((x * z).sum())
    est_rho2 = sum_rho2 / n_samples
    est_dist = sum_dist / n_samples
    est_eta = sum_xz / n_samples
    one_minus = max(1.0 - est_rho2, 1e-300)
    est_rate = 0.5 * math.log2(max(1.0 - est_eta * est_eta, 1e-300) / one_minus)
    return {
        "eta": eta,
        "delta": delta,
        "rho": rho,
        "aux_b": b,
        "n_samples": n_samples,
        "est_rho2": est_rho2,
        "est_distortion": est_dist,
        "est_eta": est_eta,
        "est_rate": est_rate,
        "exact_rate": rate_bivariate(delta, eta),
    }


def ui_bound(tau: float, fourth_moment: float) -> float:
    """Distortion contribution bound for an event of probability tau when the
    reconstruction matches the source law: 4 * sqrt(tau * E[X^4])."""
    if tau < 0 or fourth_moment < 0:
        raise ValueError("tau and fourth_moment must be nonnegative")
    return 4.0 * math.sqrt(tau * fourth_moment)
