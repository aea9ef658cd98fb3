"""Monte Carlo generation of bidirectional HOM coincidence records.

Each frame is one VDL setting in one direction: both parties emit ``N``
pulses on their own clock, the remote train crosses the fiber, the local
train goes through the delay line, nearest arrivals are paired and every
pair produces a Bernoulli coincidence outcome drawn from the closed-form
probability.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .config import ClockPair, ExperimentConfig, SourceConfig, effective_mu  # noqa: F401
from .core import FWHM_PER_SIGMA, OVERLAP_TABLE, BB84State, matched_coincidence
from .errors import ConfigError
from .security import ir_transform


class Party(str, enum.Enum):
    ALICE = "Alice"
    BOB = "Bob"


class Direction(str, enum.Enum):
    A_TO_B = "AtoB"  # Alice's pulses interfere at Bob, Bob tunes his VDL
    B_TO_A = "BtoA"

    @property
    def code(self) -> int:
        return 0 if self is Direction.A_TO_B else 1

    @property
    def remote(self) -> Party:
        return Party.ALICE if self is Direction.A_TO_B else Party.BOB

    @property
    def local(self) -> Party:
        return Party.BOB if self is Direction.A_TO_B else Party.ALICE


@dataclass(frozen=True)
class PulseRecord:
    party: Party
    index: int
    emit_time: float  # ns, Alice's frame
    state: BB84State


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under a master ``seed``.

    Streams are derived with ``SeedSequence`` spawn keys, so any set of
    frames can be produced in any order or in parallel with identical
    results.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def emission_times(party: Party, n_pulses: int, rep_period: float, delta: float) -> np.ndarray:
    times = np.arange(n_pulses, dtype=float) * rep_period
    if party is Party.BOB:
        times -= delta
    return times


def random_states(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 4, size=size, dtype=np.int8)


def emission_schedule(
    party: Party, src: SourceConfig, clocks: ClockPair, rng=None
) -> list[PulseRecord]:
    """Emission events of one party expressed in Alice's time frame.

    ``rng`` may be a Generator or an int seed; each pulse gets an
    independent uniformly random BB84 state.
    """
    rng = np.random.default_rng(rng)
    party = Party(party)
    times = emission_times(party, src.n_pulses, src.rep_period, clocks.delta_true)
    states = random_states(rng, src.n_pulses)
    return [
        PulseRecord(party, i, float(t), BB84State(int(s))) for i, (t, s) in enumerate(zip(times, states))
    ]


def pair_arrivals(
    remote_t: np.ndarray, local_t: np.ndarray, window: float
) -> tuple[np.ndarray, np.ndarray]:
    """Pair each remote arrival with the nearest local arrival within ``window``.

    ``local_t`` must be sorted.  Equidistant candidates resolve to the
    earlier local pulse.  Returns index arrays ``(remote_idx, local_idx)``.
    """
    remote_t = np.asarray(remote_t, dtype=float)
    local_t = np.asarray(local_t, dtype=float)
    if remote_t.size == 0 or local_t.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    after = np.searchsorted(local_t, remote_t, side="left")
    before = after - 1
    after_c = np.minimum(after, local_t.size - 1)
    before_c = np.maximum(before, 0)
    d_after = np.where(after < local_t.size, local_t[after_c] - remote_t, np.inf)
    d_before = np.where(before >= 0, remote_t - local_t[before_c], np.inf)
    take_before = d_before <= d_after
    local_idx = np.where(take_before, before_c, after_c)
    dist = np.where(take_before, d_before, d_after)
    keep = dist <= window
    return np.flatnonzero(keep), local_idx[keep]


def pair_pulses(
    remote: Sequence[PulseRecord],
    local: Sequence[PulseRecord],
    arrival_offsets: tuple[float, float],
    rep_period: float,
) -> list[tuple[int, int]]:
    """Index pairs ``(remote.index, local.index)`` of interfering pulses.

    ``arrival_offsets`` is ``(remote_delay, local_delay)``: the fiber
    propagation time and the local delay line setting.
    """
    if not remote or not local:
        return []
    remote_delay, local_delay = arrival_offsets
    remote_t = np.array([p.emit_time for p in remote]) + remote_delay
    local_t = np.array([p.emit_time for p in local]) + local_delay
    order = np.argsort(local_t, kind="stable")
    r_idx, l_pos = pair_arrivals(remote_t, local_t[order], 0.5 * rep_period)
    l_idx = order[l_pos]
    return [(remote[r].index, local[l].index) for r, l in zip(r_idx, l_idx)]


def sample_jitter(fwhm_ps: float, rng: np.random.Generator, size=None):
    """Gaussian detector timing jitter in picoseconds."""
    if fwhm_ps < 0:
        raise ConfigError("jitter FWHM must be non-negative")
    if fwhm_ps == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, fwhm_ps / FWHM_PER_SIGMA, size=size)


@dataclass
class FrameRecord:
    """Event log of one frame at one delay-line setting.

    The full pulse trains are kept next to the paired events so that the
    record can be re-paired at other index offsets afterwards.
    """

    direction: Direction
    vdl_setting: float
    seed: int
    key: tuple[int, ...]
    rep_period: float
    mu_eff: float
    sigma_spec: float
    jitter_fwhm: float
    jitter_terms: int
    accidental_prob: float
    remote_arrival: np.ndarray
    local_arrival: np.ndarray
    remote_state: np.ndarray  # prepared by the remote party
    delivered_state: np.ndarray  # what reaches the beamsplitter
    local_state: np.ndarray
    remote_index: np.ndarray
    local_index: np.ndarray
    tau: np.ndarray
    coincided: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return int(self.remote_index.size)

    @property
    def n_coincidences(self) -> int:
        return int(np.count_nonzero(self.coincided))

    @property
    def pairs(self) -> list[tuple]:
        return [
            (int(r), int(l), float(t), BB84State(int(self.remote_state[r])),
             BB84State(int(self.local_state[l])), bool(c))
            for r, l, t, c in zip(self.remote_index, self.local_index, self.tau, self.coincided)
        ]

    def matched_mask(self, basis: int | None = None) -> np.ndarray:
        """Pairs whose two prepared states are identical (optionally in one basis)."""
        rs = self.remote_state[self.remote_index]
        mask = rs == self.local_state[self.local_index]
        if basis is not None:
            mask &= rs // 2 == basis
        return mask

    def counts(self, postselect: bool = True, basis: int | None = None) -> tuple[int, int]:
        """``(coincidences, trials)`` with or without post-selection."""
        if not postselect:
            return self.n_coincidences, self.n_trials
        mask = self.matched_mask(basis)
        return int(np.count_nonzero(self.coincided[mask])), int(np.count_nonzero(mask))

    def index_offset(self) -> int | None:
        """Most frequent ``local - remote`` index difference among the pairs."""
        if self.n_trials == 0:
            return None
        diffs, freq = np.unique(self.local_index - self.remote_index, return_counts=True)
        return int(diffs[np.argmax(freq)])

    def write_event_log(self, fh: IO[str]) -> None:
        """One pair per line: indices, tau [ns], prepared states, outcome."""
        names = [s.name for s in BB84State]
        fh.write("# remote_index local_index tau_ns remote_state local_state coincided\n")
        for r, l, t, c in zip(self.remote_index, self.local_index, self.tau, self.coincided):
            fh.write(
                f"{r} {l} {t:.9g} {names[self.remote_state[r]]} "
                f"{names[self.local_state[l]]} {int(c)}\n"
            )


def pair_probability(
    mu_eff: float, sigma_spec: float, delivered: np.ndarray, local: np.ndarray,
    tau: np.ndarray, accidental_prob: float = 0.0,
) -> np.ndarray:
    s = OVERLAP_TABLE[delivered, local] * np.exp(-0.5 * (sigma_spec * tau) ** 2)
    p = matched_coincidence(mu_eff, s)
    if accidental_prob:
        p = p + (1.0 - p) * accidental_prob
    return p


def jitter_ns(rng: np.random.Generator, fwhm_ps: float, terms: int, size: int) -> np.ndarray:
    total = np.zeros(size)
    for _ in range(terms):
        total += sample_jitter(fwhm_ps, rng, size)
    return total * 1e-3


def simulate_frame(
    cfg: ExperimentConfig,
    direction: Direction | str,
    vdl_setting: float,
    seed: int,
    key: Iterable[int] = (),
) -> FrameRecord:
    """Simulate one frame of ``cfg.source.n_pulses`` pulses per party.

    The random stream is determined by ``(seed, direction, *key)`` only, so a
    frame can be regenerated bit for bit.  Orchestrators pass the VDL and
    frame indices as ``key``.
    """
    direction = Direction(direction)
    key = tuple(int(k) for k in key)
    mu = cfg.mu_eff
    if not mu > 0:
        raise ConfigError(f"effective mean photon number must be positive, got {mu}")
    src, ch, det = cfg.source, cfg.channel, cfg.detector
    rng = stream(seed, direction.code, *key)

    n = src.n_pulses
    alice_t = emission_times(Party.ALICE, n, src.rep_period, cfg.clocks.delta_true)
    bob_t = emission_times(Party.BOB, n, src.rep_period, cfg.clocks.delta_true)
    if direction is Direction.A_TO_B:
        remote_arrival = alice_t + ch.prop_delay_ab
        local_arrival = bob_t + vdl_setting
    else:
        remote_arrival = bob_t + ch.prop_delay_ba
        local_arrival = alice_t + vdl_setting

    remote_state = random_states(rng, n)
    local_state = random_states(rng, n)
    if cfg.attack.kind == "intercept_resend":
        delivered = ir_transform(remote_state, rng)
    else:
        delivered = remote_state

    r_idx, l_idx = pair_arrivals(remote_arrival, local_arrival, 0.5 * src.rep_period)
    m = r_idx.size
    tau = local_arrival[l_idx] - remote_arrival[r_idx]
    tau = tau + jitter_ns(rng, det.jitter_fwhm, det.jitter_terms, m)
    p = pair_probability(
        mu, src.sigma_spec, delivered[r_idx], local_state[l_idx], tau, det.accidental_prob
    )
    coincided = rng.random(m) < p

    return FrameRecord(
        direction=direction,
        vdl_setting=float(vdl_setting),
        seed=seed,
        key=key,
        rep_period=src.rep_period,
        mu_eff=mu,
        sigma_spec=src.sigma_spec,
        jitter_fwhm=det.jitter_fwhm,
        jitter_terms=det.jitter_terms,
        accidental_prob=det.accidental_prob,
        remote_arrival=remote_arrival,
        local_arrival=local_arrival,
        remote_state=remote_state,
        delivered_state=delivered,
        local_state=local_state,
        remote_index=r_idx,
        local_index=l_idx,
        tau=tau,
        coincided=coincided,
    )


def balanced_delay(cfg: ExperimentConfig, direction: Direction | str, k: int) -> float:
    """Delay-line setting that zeroes the mean arrival difference for index offset ``k``.

    Simulator-side truth (uses the true offset and channel delays); the
    estimation pipeline never calls this.
    """
    direction = Direction(direction)
    t_rep, delta = cfg.source.rep_period, cfg.clocks.delta_true
    if direction is Direction.A_TO_B:
        return delta + cfg.channel.prop_delay_ab - k * t_rep
    return cfg.channel.prop_delay_ba - delta - k * t_rep
