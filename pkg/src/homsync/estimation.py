"""Offset estimation from scan data: dip fit, index correlation, offset algebra."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FitError, InsufficientDataError, NoDipError
from .simulation import FrameRecord, jitter_ns, pair_probability, stream

PARAM_NAMES = ("baseline", "depth", "center", "width")
_CORRELATION_TAG = 99
_K_SHIFT = 1 << 20  # spawn keys must be non-negative


@dataclass(frozen=True)
class ScanPoint:
    delay: float
    rate: float
    stderr: float
    n_trials: int
    coincidences: int = -1

    @classmethod
    def from_counts(cls, delay: float, coincidences: int, n_trials: int) -> "ScanPoint":
        """Binomial rate and error; 0 or n counts fall back to the rule of three (3/n)."""
        if n_trials <= 0:
            return cls(float(delay), math.nan, math.inf, 0, 0)
        rate = coincidences / n_trials
        if 0 < coincidences < n_trials:
            err = math.sqrt(rate * (1.0 - rate) / n_trials)
        else:
            err = 3.0 / n_trials
        return cls(float(delay), rate, err, int(n_trials), int(coincidences))


@dataclass(frozen=True)
class DipFit:
    """Weighted inverted-Gaussian fit ``B - A exp(-(d - d0)^2 / (2 w^2))``."""

    baseline: float
    depth: float
    center: float
    width: float
    covariance: np.ndarray
    chi2: float
    dof: int
    iterations: int

    @property
    def params(self) -> np.ndarray:
        return np.array([self.baseline, self.depth, self.center, self.width])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def center_stderr(self) -> float:
        return float(math.sqrt(self.covariance[2, 2]))

    @property
    def minimum(self) -> float:
        """Fitted rate at the dip centre, B - A."""
        return self.baseline - self.depth

    @property
    def minimum_stderr(self) -> float:
        c = self.covariance
        return float(math.sqrt(max(c[0, 0] + c[1, 1] - 2 * c[0, 1], 0.0)))

    def model(self, delay):
        return inverted_gaussian(np.asarray(delay, dtype=float), self.params)


def inverted_gaussian(d: np.ndarray, p: np.ndarray) -> np.ndarray:
    baseline, depth, center, width = p
    return baseline - depth * np.exp(-0.5 * ((d - center) / width) ** 2)


def _jacobian(d: np.ndarray, p: np.ndarray) -> np.ndarray:
    _, depth, center, width = p
    x = d - center
    g = np.exp(-0.5 * (x / width) ** 2)
    jac = np.empty((d.size, 4))
    jac[:, 0] = 1.0
    jac[:, 1] = -g
    jac[:, 2] = -depth * g * x / width**2
    jac[:, 3] = -depth * g * x**2 / width**3
    return jac


def _smooth(y: np.ndarray) -> np.ndarray:
    # Moving average over ~4% of the scan; keeps sparse-count scans from
    # seeding the fit at a noise minimum.
    half = max(0, int(round(y.size / 50)))
    if half == 0:
        return y
    kernel = np.ones(2 * half + 1) / (2 * half + 1)
    return np.convolve(np.pad(y, half, mode="edge"), kernel, mode="valid")


def initial_guess(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Starting point read off the (lightly smoothed) scan profile."""
    ys = _smooth(y)
    n_top = max(1, int(round(0.2 * ys.size)))
    baseline = float(np.mean(np.sort(ys)[-n_top:]))
    i_min = int(np.argmin(ys))
    depth = baseline - float(ys[i_min])
    below = d[ys < baseline - 0.5 * depth]
    width = 0.5 * float(below.max() - below.min()) if below.size > 1 else 0.0
    if width <= 0:
        width = float(np.median(np.diff(np.sort(d))))
    return np.array([baseline, depth, float(d[i_min]), width])


def fit_inverted_gaussian(
    points: Sequence[ScanPoint],
    max_iter: int = 200,
    chi2_rtol: float = 1e-10,
    step_rtol: float = 1e-8,
) -> DipFit:
    """Levenberg-Marquardt fit of an inverted Gaussian to a delay scan.

    Residuals are weighted by the per-point standard errors; the returned
    covariance is ``(J^T W J)^-1`` at the optimum (errors taken as absolute).

    Raises:
        NoDipError: fewer than five usable points, flat data, or a fitted
            depth that is not positive.
        FitError: no convergence within ``max_iter`` iterations.
    """
    d = np.array([pt.delay for pt in points], dtype=float)
    y = np.array([pt.rate for pt in points], dtype=float)
    e = np.array([pt.stderr for pt in points], dtype=float)
    ok = np.isfinite(y) & np.isfinite(e) & (e > 0)
    d, y, e = d[ok], y[ok], e[ok]
    if d.size < 5:
        raise NoDipError(f"need at least 5 usable scan points, got {d.size}")
    if np.ptp(y) == 0 or np.ptp(d) == 0:
        raise NoDipError("scan is flat: no dip to fit")

    p = initial_guess(d, y)
    if not p[1] > 0:
        raise NoDipError("no dip below the baseline")

    def chi2_of(params):
        return float(np.sum(((y - inverted_gaussian(d, params)) / e) ** 2))

    chi2 = chi2_of(p)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jw = _jacobian(d, p) / e[:, None]
        rw = (y - inverted_gaussian(d, p)) / e
        jtj = jw.T @ jw
        grad = jw.T @ rw
        scale = np.diag(np.diag(jtj))
        while True:
            try:
                step = np.linalg.solve(jtj + lam * scale, grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                trial = p + step
                trial_chi2 = chi2_of(trial) if trial[3] > 0 else math.inf
                if trial_chi2 <= chi2:
                    break
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left: already at the minimum
                step = np.zeros(4)
                trial, trial_chi2 = p, chi2
                break
        lam = max(lam / 10.0, 1e-12)
        rel_drop = (chi2 - trial_chi2) / chi2 if chi2 > 0 else 0.0
        small_step = np.all(np.abs(step) <= step_rtol * (np.abs(trial) + step_rtol))
        p, chi2 = trial, trial_chi2
        if small_step or (0 <= rel_drop < chi2_rtol) or chi2 < 1e-28 * d.size:
            converged = True
            break
    if not converged:
        raise FitError(f"dip fit did not converge in {max_iter} iterations", last_params=p)

    jw = _jacobian(d, p) / e[:, None]
    try:
        cov = np.linalg.inv(jw.T @ jw)
    except np.linalg.LinAlgError:
        raise FitError("singular normal matrix at the optimum", last_params=p) from None
    if not p[1] > 0:
        raise NoDipError("fitted dip depth is not positive", last_params=p)
    return DipFit(
        baseline=float(p[0]),
        depth=float(p[1]),
        center=float(p[2]),
        width=float(p[3]),
        covariance=cov,
        chi2=chi2,
        dof=int(d.size - 4),
        iterations=it,
    )


@dataclass(frozen=True)
class CorrelationPoint:
    k: int
    rate: float
    stderr: float
    n_trials: int
    coincidences: int


def _correlate_frame(frame: FrameRecord, k: int) -> tuple[int, int]:
    n_remote, n_local = frame.remote_arrival.size, frame.local_arrival.size
    r = np.arange(max(0, -k), max(max(0, -k), min(n_remote, n_local - k)))
    l = r + k
    matched = frame.remote_state[r] == frame.local_state[l]
    r, l = r[matched], l[matched]
    if r.size == 0:
        return 0, 0

    recorded_local = np.full(n_remote, -1, dtype=np.int64)
    recorded_local[frame.remote_index] = frame.local_index
    recorded_hit = np.zeros(n_remote, dtype=bool)
    recorded_hit[frame.remote_index] = frame.coincided
    reuse = recorded_local[r] == l

    # Pairings absent from the event record get their own stream per k.
    rng = stream(frame.seed, frame.direction.code, *frame.key, _CORRELATION_TAG, k + _K_SHIFT)
    tau = frame.local_arrival[l] - frame.remote_arrival[r]
    tau = tau + jitter_ns(rng, frame.jitter_fwhm, frame.jitter_terms, r.size)
    p = pair_probability(
        frame.mu_eff, frame.sigma_spec, frame.delivered_state[r], frame.local_state[l],
        tau, frame.accidental_prob,
    )
    fresh = rng.random(r.size) < p
    hits = np.where(reuse, recorded_hit[r], fresh)
    return int(np.count_nonzero(hits)), int(r.size)


def correlation_scan(
    frames: FrameRecord | Sequence[FrameRecord], k_range: Iterable[int]
) -> list[CorrelationPoint]:
    """Post-selected coincidence rate versus integer pulse-index offset.

    Every remote pulse ``r`` is re-paired with local pulse ``r + k``; only
    identically prepared pairs count.  Outcomes for pairings already in the
    event record are reused, other pairings are drawn from the same model.
    """
    if isinstance(frames, FrameRecord):
        frames = [frames]
    out = []
    for k in k_range:
        hits = trials = 0
        for frame in frames:
            h, n = _correlate_frame(frame, int(k))
            hits += h
            trials += n
        pt = ScanPoint.from_counts(0.0, hits, trials)
        out.append(CorrelationPoint(int(k), pt.rate, pt.stderr, trials, hits))
    return out


def best_offset(points: Sequence[CorrelationPoint]) -> int:
    """Index offset with the lowest post-selected rate (zero-trial offsets skipped)."""
    usable = [pt for pt in points if pt.n_trials > 0]
    if not usable:
        raise InsufficientDataError("no post-selected pairs at any index offset")
    return min(usable, key=lambda pt: pt.rate).k


@dataclass(frozen=True)
class OffsetEstimate:
    k: int
    k_prime: int
    dt_bb: float
    dt_bb_stderr: float
    dt_aa: float
    dt_aa_stderr: float
    delta_hat: float
    delta_stderr: float


def _value_and_error(x) -> tuple[float, float]:
    if isinstance(x, DipFit):
        return x.center, x.center_stderr
    if isinstance(x, tuple):
        return float(x[0]), float(x[1])
    return float(x), 0.0


def estimate_offset(dt_aa, dt_bb, k: int, k_prime: int, t_rep: float) -> OffsetEstimate:
    """Clock offset from the two balanced delays and index offsets.

    ``dt_aa`` and ``dt_bb`` may be :class:`DipFit` results, ``(value,
    stderr)`` tuples or plain numbers (zero error).
    """
    aa, aa_err = _value_and_error(dt_aa)
    bb, bb_err = _value_and_error(dt_bb)
    delta = 0.5 * ((k - k_prime) * t_rep + bb - aa)
    err = 0.5 * math.hypot(bb_err, aa_err)
    return OffsetEstimate(int(k), int(k_prime), bb, bb_err, aa, aa_err, delta, err)


def asymmetry_bias(dt_ab: float, dt_ba: float) -> float:
    """Bias of the offset estimate when the channel is not reciprocal."""
    return 0.5 * (dt_ab - dt_ba)
