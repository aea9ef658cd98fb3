"""End-to-end runs: delay scans, full bidirectional sync, security checks, curves."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .core import hom_dip, spectral_sigma
from .errors import FitError, InsufficientDataError
from .estimation import (
    CorrelationPoint,
    DipFit,
    OffsetEstimate,
    ScanPoint,
    best_offset,
    correlation_scan,
    estimate_offset,
    fit_inverted_gaussian,
)
from .security import (
    DetectionVerdict,
    DipRow,
    SweepRow,
    attack_dip,
    attack_sweep,
    detect_eavesdropper,
)
from .simulation import Direction, FrameRecord, balanced_delay, simulate_frame

log = logging.getLogger(__name__)

_SECURITY_TAG = 50


def scan_center(cfg: ExperimentConfig, direction: Direction) -> tuple[float, int]:
    """Expected balanced delay from the nominal fiber delay and a coarse offset.

    Returns the centre of the delay-line sweep and the index offset that a
    dip at that centre corresponds to.
    """
    t_rep = cfg.source.rep_period
    coarse = cfg.scan.coarse_offset
    if coarse is None:
        coarse = cfg.clocks.delta_true
    nominal = 0.5 * (cfg.channel.prop_delay_ab + cfg.channel.prop_delay_ba)
    wraps = math.floor(coarse / t_rep)
    frac = coarse - wraps * t_rep
    if direction is Direction.A_TO_B:
        return nominal + frac, wraps
    return nominal - frac, -wraps


def vdl_grid(center: float, span: float, step: float) -> np.ndarray:
    """Symmetric delay-line settings ``center +- span`` at resolution ``step``."""
    n = int(math.floor(2.0 * span / step + 1e-9)) + 1
    return center + (np.arange(n) - 0.5 * (n - 1)) * step


def _frames_at(cfg, direction, setting, index, seed) -> list[FrameRecord]:
    return [
        simulate_frame(cfg, direction, setting, seed, key=(index, f)) for f in range(cfg.scan.frames)
    ]


def _scan_point(cfg, direction, setting, index, seed) -> ScanPoint:
    hits = trials = 0
    for frame in _frames_at(cfg, direction, setting, index, seed):
        h, n = frame.counts(postselect=True)
        hits += h
        trials += n
    return ScanPoint.from_counts(setting, hits, trials)


@dataclass
class DirectionResult:
    direction: Direction
    center: float
    coarse_k: int
    points: list[ScanPoint]
    fit: DipFit | None = None
    nearest_setting: float | None = None
    correlation: list[CorrelationPoint] = field(default_factory=list)
    k: int | None = None
    frames: list[FrameRecord] = field(default_factory=list)


def run_scan(cfg: ExperimentConfig, direction: Direction | str, seed: int | None = None) -> DirectionResult:
    """Path-balancing sweep of one direction (no fitting)."""
    direction = Direction(direction)
    seed = cfg.seed if seed is None else seed
    center, coarse_k = scan_center(cfg, direction)
    settings = vdl_grid(center, cfg.vdl_span, cfg.scan.vdl_step)
    tasks = [(cfg, direction, s, i, seed) for i, s in enumerate(settings)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            points = list(pool.map(lambda a: _scan_point(*a), tasks))
    else:
        points = [_scan_point(*a) for a in tasks]
    return DirectionResult(direction, center, coarse_k, points)


def fit_scan(result: DirectionResult) -> DirectionResult:
    try:
        result.fit = fit_inverted_gaussian(result.points)
    except FitError as exc:
        exc.stage = f"path-balancing fit ({result.direction.value})"
        raise
    return result


def correlate(cfg: ExperimentConfig, result: DirectionResult, seed: int | None = None) -> DirectionResult:
    """Index-offset correlation on the frames nearest the fitted optimum."""
    seed = cfg.seed if seed is None else seed
    settings = np.array([pt.delay for pt in result.points])
    index = int(np.argmin(np.abs(settings - result.fit.center)))
    result.nearest_setting = float(settings[index])
    result.frames = _frames_at(cfg, result.direction, result.nearest_setting, index, seed)
    ks = range(result.coarse_k - cfg.scan.k_range, result.coarse_k + cfg.scan.k_range + 1)
    result.correlation = correlation_scan(result.frames, ks)
    try:
        result.k = best_offset(result.correlation)
    except InsufficientDataError as exc:
        raise InsufficientDataError(f"correlation ({result.direction.value}): {exc}") from None
    return result


def run_direction(cfg: ExperimentConfig, direction: Direction | str, seed: int | None = None) -> DirectionResult:
    result = fit_scan(run_scan(cfg, direction, seed))
    return correlate(cfg, result, seed)


@dataclass
class SyncResult:
    a_to_b: DirectionResult
    b_to_a: DirectionResult
    estimate: OffsetEstimate
    delta_true: float

    @property
    def error(self) -> float:
        return self.estimate.delta_hat - self.delta_true

    @property
    def accuracy(self) -> float:
        return abs(self.error)


def run_sync(cfg: ExperimentConfig, seed: int | None = None) -> SyncResult:
    """Both scans, both correlations and the final offset estimate."""
    if cfg.source.n_pulses == 0:
        raise InsufficientDataError("n_pulses is zero: nothing to synchronise on")
    ab = run_direction(cfg, Direction.A_TO_B, seed)
    ba = run_direction(cfg, Direction.B_TO_A, seed)
    est = estimate_offset(ba.fit, ab.fit, ab.k, ba.k, cfg.source.rep_period)
    log.info(
        "delta_hat = %.6f +- %.6f ns (k=%d, k'=%d)", est.delta_hat, est.delta_stderr, est.k, est.k_prime
    )
    return SyncResult(ab, ba, est, cfg.clocks.delta_true)


@dataclass
class ChannelCheck:
    channel: str
    verdict: DetectionVerdict
    rate_rectilinear: float
    rate_diagonal: float
    warning: str = ""


@dataclass
class SecurityResult:
    checks: list[ChannelCheck]
    sweep: list[SweepRow]
    dip: list[DipRow]


def check_channel(cfg: ExperimentConfig, attack: str, seed: int | None = None) -> ChannelCheck:
    """Post-selected zero-delay rate on a simulated channel and the detection test."""
    seed = cfg.seed if seed is None else seed
    run_cfg = cfg.replace(attack={"kind": attack})
    _, k = scan_center(cfg, Direction.A_TO_B)
    setting = balanced_delay(cfg, Direction.A_TO_B, k)
    code = 0 if attack == "none" else 1
    frames = [
        simulate_frame(run_cfg, Direction.A_TO_B, setting, seed, key=(_SECURITY_TAG, code, f))
        for f in range(cfg.scan.frames)
    ]
    hits = sum(fr.counts()[0] for fr in frames)
    trials = sum(fr.counts()[1] for fr in frames)
    if trials == 0:
        raise InsufficientDataError(f"{attack} channel: no post-selected trials")
    verdict = detect_eavesdropper((hits / trials, trials), cfg.mu_eff, cfg.security.significance)
    per_basis = []
    for basis in (0, 1):
        h = sum(fr.counts(basis=basis)[0] for fr in frames)
        n = sum(fr.counts(basis=basis)[1] for fr in frames)
        per_basis.append(h / n if n else math.nan)
    warning = ""
    if trials < cfg.security.min_trials:
        warning = f"only {trials} post-selected trials (< {cfg.security.min_trials})"
        log.warning("%s channel: %s", attack, warning)
    return ChannelCheck(attack, verdict, per_basis[0], per_basis[1], warning)


def run_security(cfg: ExperimentConfig, seed: int | None = None) -> SecurityResult:
    seed = cfg.seed if seed is None else seed
    checks = [check_channel(cfg, kind, seed) for kind in ("none", "intercept_resend")]
    sec = cfg.security
    sweep = attack_sweep(sec.mu_values, sec.mc_trials, seed)
    taus = vdl_grid(0.0, sec.tau_span, sec.tau_step)
    dip = attack_dip(cfg.mu_eff, taus, cfg.source.sigma_spec, sec.mc_trials, seed)
    return SecurityResult(checks, sweep, dip)


@dataclass(frozen=True)
class CurveRow:
    figure: str
    mu: float
    phi: float
    sigma_t: float
    tau: float
    p_co: float


def compute_curves(cfg: ExperimentConfig) -> list[CurveRow]:
    """Analytic coincidence probability versus delay.

    ``mu_phi`` rows vary mean photon number and polarization angle at the
    configured pulse width; ``sigma_t`` rows vary the width at mu = 1 with
    matched polarization.
    """
    cc = cfg.curves
    conv = cfg.source.width_convention
    taus = vdl_grid(0.0, cc.tau_span, cc.tau_step)
    rows = []
    width = cfg.source.temporal_width
    sigma = spectral_sigma(width, conv)
    for mu in cc.mu_values:
        for phi in cc.phi_values:
            cos_phi = min(max(math.cos(phi), 0.0), 1.0)
            p = hom_dip(mu, cos_phi, taus, sigma)
            rows.extend(CurveRow("mu_phi", mu, phi, width, t, v) for t, v in zip(taus, p))
    for width in cc.sigma_t_values:
        p = hom_dip(1.0, 1.0, taus, spectral_sigma(width, conv))
        rows.extend(CurveRow("sigma_t", 1.0, 0.0, width, t, v) for t, v in zip(taus, p))
    return rows
