"""Intercept-resend adversary and the post-selected coincidence-floor test."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .core import (
    INV_SQRT2,
    OVERLAP_TABLE,
    BB84State,
    _bessel_i0m1,
    _check_mu,
    expected_floor,
    hom_dip,
    matched_coincidence,
    postselected_min,
)
from .errors import InsufficientDataError


def ir_transform(state, rng: np.random.Generator):
    """Measure-and-resend a BB84 state (or an array of state codes).

    Eve picks the rectilinear or diagonal basis with probability 1/2.  In
    the preparation basis she learns the state and resends it; otherwise
    her outcome is a fair coin and she resends that state of her basis.
    """
    states = np.asarray(state, dtype=np.int8)
    eve_basis = rng.integers(0, 2, size=states.shape, dtype=np.int8)
    outcome = rng.integers(0, 2, size=states.shape, dtype=np.int8)
    resent = np.where(eve_basis == states // 2, states, 2 * eve_basis + outcome).astype(np.int8)
    if resent.ndim == 0:
        return BB84State(int(resent))
    return resent


def measure_in_basis(state, basis, rng: np.random.Generator):
    """Projective measurement of BB84 states in a basis (0 rectilinear, 1 diagonal)."""
    states = np.asarray(state, dtype=np.int8)
    basis = np.broadcast_to(np.asarray(basis, dtype=np.int8), states.shape)
    coin = rng.integers(0, 2, size=states.shape, dtype=np.int8)
    return np.where(states // 2 == basis, states, 2 * basis + coin).astype(np.int8)


def ir_postselected_floor(mu: float) -> float:
    """Zero-delay post-selected coincidence probability under intercept-resend.

    Half the matched pairs survive Eve untouched (overlap 1), the other half
    arrive in the conjugate basis (overlap 1/sqrt 2).
    """
    _check_mu(mu)
    e = math.exp(-mu)
    i0m1_full, i0m1_diag = _bessel_i0m1([mu, mu * INV_SQRT2])
    return float(np.clip(math.expm1(-mu) ** 2 - e * (i0m1_full + i0m1_diag), 0.0, 1.0))


def ir_dip(mu: float, tau, sigma_spec: float):
    return 0.5 * hom_dip(mu, 1.0, tau, sigma_spec) + 0.5 * hom_dip(mu, INV_SQRT2, tau, sigma_spec)


@dataclass(frozen=True)
class DetectionVerdict:
    observed_rate: float
    n_trials: int
    honest_floor: float
    attacked_floor: float
    threshold: float
    z_score: float
    flagged: bool


def detect_eavesdropper(
    observed: tuple[float, int], mu: float, significance: float = 0.00135
) -> DetectionVerdict:
    """One-sided binomial test of a post-selected coincidence rate.

    The threshold sits ``z(significance)`` binomial standard errors above
    the honest floor, but never above the midpoint between the honest and
    the intercept-resend floors.

    Args:
        observed: ``(rate, n_trials)`` over post-selected pairs at zero delay.
        mu: effective mean photon number at the beamsplitter.
        significance: false-alarm probability for an honest channel.

    Raises:
        InsufficientDataError: if there are no trials.
    """
    rate, n = observed
    if n <= 0:
        raise InsufficientDataError("no post-selected trials to test")
    if not 0 < significance < 0.5:
        raise ValueError("significance must lie in (0, 0.5)")
    honest = postselected_min(mu)
    attacked = ir_postselected_floor(mu)
    sigma = math.sqrt(honest * (1.0 - honest) / n)
    z = NormalDist().inv_cdf(1.0 - significance)
    threshold = min(honest + z * sigma, 0.5 * (honest + attacked))
    if sigma > 0:
        z_score = (rate - honest) / sigma
    else:
        z_score = 0.0 if rate == honest else math.copysign(math.inf, rate - honest)
    return DetectionVerdict(
        observed_rate=float(rate),
        n_trials=int(n),
        honest_floor=honest,
        attacked_floor=attacked,
        threshold=threshold,
        z_score=z_score,
        flagged=bool(rate > threshold),
    )


def sample_postselected(
    mu: float,
    n_trials: int,
    rng: np.random.Generator,
    attack: str = "none",
    tau: float = 0.0,
    sigma_spec: float = 1.0,
    basis: int | None = None,
) -> int:
    """Coincidence count from ``n_trials`` post-selected pulse pairs at delay ``tau``."""
    if basis is None:
        prepared = rng.integers(0, 4, size=n_trials, dtype=np.int8)
    else:
        prepared = (2 * basis + rng.integers(0, 2, size=n_trials)).astype(np.int8)
    delivered = ir_transform(prepared, rng) if attack == "intercept_resend" else prepared
    s = OVERLAP_TABLE[delivered, prepared] * math.exp(-0.5 * (sigma_spec * tau) ** 2)
    return int(np.count_nonzero(rng.random(n_trials) < matched_coincidence(mu, s)))


def _binomial(count: int, n: int) -> tuple[float, float]:
    rate = count / n
    return rate, math.sqrt(rate * (1.0 - rate) / n)


@dataclass(frozen=True)
class SweepRow:
    mu: float
    honest_analytic: float
    honest_mc: float
    honest_err: float
    ir_analytic: float
    ir_mc: float
    ir_err: float
    floor_eq10: float


def attack_sweep(mu_values, n_trials: int = 20_000, seed: int = 0) -> list[SweepRow]:
    """Zero-delay post-selected floors versus mean photon number.

    Analytic honest and intercept-resend curves plus Monte Carlo points with
    binomial error bars, and the unpost-selected BB84 floor for reference.
    """
    from .simulation import stream

    rows = []
    for i, mu in enumerate(mu_values):
        _check_mu(mu)
        honest = _binomial(sample_postselected(mu, n_trials, stream(seed, 70, i, 0)), n_trials)
        attacked = _binomial(
            sample_postselected(mu, n_trials, stream(seed, 70, i, 1), "intercept_resend"),
            n_trials,
        )
        rows.append(
            SweepRow(
                mu=float(mu),
                honest_analytic=postselected_min(mu),
                honest_mc=honest[0],
                honest_err=honest[1],
                ir_analytic=ir_postselected_floor(mu),
                ir_mc=attacked[0],
                ir_err=attacked[1],
                floor_eq10=expected_floor(mu),
            )
        )
    return rows


@dataclass(frozen=True)
class DipRow:
    tau: float
    honest_analytic: float
    honest_mc: float
    honest_err: float
    ir_analytic: float
    ir_mc: float
    ir_err: float


def attack_dip(
    mu: float, taus, sigma_spec: float, n_trials: int = 20_000, seed: int = 0
) -> list[DipRow]:
    """Honest versus intercept-resend HOM dip over relative delay."""
    from .simulation import stream

    rows = []
    for i, tau in enumerate(taus):
        honest = _binomial(
            sample_postselected(mu, n_trials, stream(seed, 71, i, 0), tau=tau, sigma_spec=sigma_spec),
            n_trials,
        )
        attacked = _binomial(
            sample_postselected(
                mu, n_trials, stream(seed, 71, i, 1), "intercept_resend", tau, sigma_spec
            ),
            n_trials,
        )
        rows.append(
            DipRow(
                tau=float(tau),
                honest_analytic=float(hom_dip(mu, 1.0, tau, sigma_spec)),
                honest_mc=honest[0],
                honest_err=honest[1],
                ir_analytic=float(ir_dip(mu, tau, sigma_spec)),
                ir_mc=attacked[0],
                ir_err=attacked[1],
            )
        )
    return rows
