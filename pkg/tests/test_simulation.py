import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homsync.config import ClockPair, ExperimentConfig, SourceConfig, effective_mu
from homsync.core import BB84State, expected_floor, no_interference_max, postselected_min
from homsync.errors import ConfigError
from homsync.simulation import (
    Direction,
    Party,
    balanced_delay,
    emission_schedule,
    pair_arrivals,
    pair_pulses,
    sample_jitter,
    simulate_frame,
)


def binomial_band(p, n, nsig=3.0):
    return nsig * math.sqrt(p * (1 - p) / n)


class TestEmissionSchedule:
    def test_alice(self):
        recs = emission_schedule(Party.ALICE, SourceConfig(n_pulses=3), ClockPair(230.456), rng=1)
        assert [r.emit_time for r in recs] == [0.0, 100.0, 200.0]
        assert [r.index for r in recs] == [0, 1, 2]
        assert all(r.party is Party.ALICE for r in recs)

    def test_bob(self):
        recs = emission_schedule(Party.BOB, SourceConfig(n_pulses=3), ClockPair(230.456), rng=1)
        np.testing.assert_allclose([r.emit_time for r in recs], [-230.456, -130.456, -30.456])

    def test_single_pulse(self):
        for party, t0 in [(Party.ALICE, 0.0), (Party.BOB, -5.0)]:
            recs = emission_schedule(party, SourceConfig(n_pulses=1), ClockPair(5.0), rng=0)
            assert len(recs) == 1 and recs[0].emit_time == t0

    def test_states_uniform(self):
        recs = emission_schedule(Party.ALICE, SourceConfig(n_pulses=40_000), ClockPair(), rng=7)
        counts = np.bincount([int(r.state) for r in recs], minlength=4)
        assert all(isinstance(r.state, BB84State) for r in recs[:5])
        np.testing.assert_allclose(counts / 40_000, 0.25, atol=4 * math.sqrt(0.25 * 0.75 / 40_000))


class TestEffectiveMu:
    def test_reference_value(self):
        assert effective_mu(1.86, 2.0, 0.85) == pytest.approx(0.9975435616231856, rel=1e-12)

    def test_identities(self):
        assert effective_mu(0.7, 0.0, 1.0) == 0.7
        assert effective_mu(0.0, 5.0, 0.3) == 0.0

    @pytest.mark.parametrize("args", [(-1, 0, 1), (1, -1, 1), (1, 0, -0.1), (1, 0, 1.1)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            effective_mu(*args)


class TestPairing:
    def test_balanced_zero_offset(self):
        src = SourceConfig(n_pulses=5)
        a = emission_schedule(Party.ALICE, src, ClockPair(0.0), rng=0)
        b = emission_schedule(Party.BOB, src, ClockPair(0.0), rng=1)
        assert pair_pulses(a, b, (500.0, 500.0), 100.0) == [(i, i) for i in range(5)]

    def test_reference_geometry(self):
        cfg = ExperimentConfig().replace(source={"n_pulses": 50})
        src, clocks = cfg.source, cfg.clocks
        a = emission_schedule(Party.ALICE, src, clocks, rng=0)
        b = emission_schedule(Party.BOB, src, clocks, rng=1)
        pairs = pair_pulses(a, b, (50_000.0, 50_030.456), src.rep_period)
        assert {l - r for r, l in pairs} == {2}
        assert len(pairs) == 48

    def test_ties_go_to_earlier_local(self):
        src = SourceConfig(n_pulses=3)
        a = emission_schedule(Party.ALICE, src, ClockPair(0.0), rng=0)
        b = emission_schedule(Party.BOB, src, ClockPair(0.0), rng=0)
        # local arrivals at 50, 150, 250: remote 100 is equidistant from 50 and 150
        assert pair_pulses(a, b, (0.0, 50.0), 100.0) == [(0, 0), (1, 0), (2, 1)]
        # local arrivals at -50, 50, 150
        assert pair_pulses(a, b, (0.0, -50.0), 100.0) == [(0, 0), (1, 1), (2, 2)]

    def test_empty(self):
        assert pair_pulses([], [], (0.0, 0.0), 100.0) == []
        r, l = pair_arrivals(np.array([]), np.array([1.0]), 5.0)
        assert r.size == 0 and l.size == 0

    def test_outside_window_dropped(self):
        r, l = pair_arrivals(np.array([0.0, 1000.0]), np.array([10.0, 20.0]), 50.0)
        assert r.tolist() == [0] and l.tolist() == [0]

    @given(
        delta=st.floats(-2000, 2000),
        d_ab=st.floats(0, 5000),
        d_bb=st.floats(0, 5000),
    )
    @settings(max_examples=200)
    def test_index_difference_matches_coincidence_condition(self, delta, d_ab, d_bb):
        t_rep = 100.0
        expected = (delta + d_ab - d_bb) / t_rep
        frac = expected - math.floor(expected)
        if abs(frac - 0.5) < 1e-6:
            return  # tie, covered above
        n = 120
        alice = np.arange(n) * t_rep + d_ab
        bob = np.arange(n) * t_rep - delta + d_bb
        r, l = pair_arrivals(alice, bob, t_rep / 2)
        assert r.size > 0
        assert set((l - r).tolist()) == {round(expected)}


class TestJitter:
    def test_zero(self):
        rng = np.random.default_rng(0)
        assert sample_jitter(0.0, rng) == 0.0
        assert np.all(sample_jitter(0.0, rng, 10) == 0.0)

    def test_width_and_mean(self):
        x = sample_jitter(150.0, np.random.default_rng(1), 1_000_000)
        assert x.std() == pytest.approx(150 / 2.35482, rel=0.01)
        assert abs(x.mean()) < 4 * (150 / 2.35482) / 1000

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            sample_jitter(-1.0, np.random.default_rng(0))


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig()


class TestSimulateFrame:
    def test_balanced_postselected_rate(self, cfg):
        frame = simulate_frame(cfg, Direction.A_TO_B, balanced_delay(cfg, "AtoB", 2), seed=11)
        hits, n = frame.counts(postselect=True)
        p = postselected_min(cfg.mu_eff)
        assert abs(hits / n - p) < binomial_band(p, n)
        assert frame.index_offset() == 2

    def test_balanced_all_pairs_rate(self, cfg):
        frame = simulate_frame(cfg, Direction.B_TO_A, balanced_delay(cfg, "BtoA", -2), seed=12)
        hits, n = frame.counts(postselect=False)
        p = expected_floor(cfg.mu_eff)
        assert abs(hits / n - p) < binomial_band(p, n)
        assert frame.index_offset() == -2

    def test_detuned_rate(self, cfg):
        wide = cfg.replace(source={"rep_period": 1000.0})
        setting = balanced_delay(wide, "AtoB", 0) + 200.0
        frame = simulate_frame(wide, Direction.A_TO_B, setting, seed=13)
        hits, n = frame.counts(postselect=True)
        p = no_interference_max(wide.mu_eff)
        assert abs(hits / n - p) < binomial_band(p, n)
        assert p == pytest.approx(0.3995764, abs=1e-6)

    def test_empty_frame(self, cfg):
        frame = simulate_frame(cfg.replace(source={"n_pulses": 0}), "AtoB", 50_000.0, seed=1)
        assert frame.n_trials == 0 and frame.counts() == (0, 0)
        assert frame.index_offset() is None

    def test_deterministic(self, cfg):
        small = cfg.replace(source={"n_pulses": 2000})
        f1 = simulate_frame(small, "AtoB", 50_030.0, seed=5, key=(3, 0))
        f2 = simulate_frame(small, "AtoB", 50_030.0, seed=5, key=(3, 0))
        f3 = simulate_frame(small, "AtoB", 50_030.0, seed=5, key=(4, 0))
        for name in ("tau", "coincided", "remote_state", "local_state", "remote_index"):
            np.testing.assert_array_equal(getattr(f1, name), getattr(f2, name))
        assert not np.array_equal(f1.remote_state, f3.remote_state)

    def test_nonpositive_mu(self, cfg):
        with pytest.raises(ConfigError):
            simulate_frame(cfg.replace(source={"mu_source": 0.0}), "AtoB", 0.0, seed=1)

    def test_record_invariants(self, cfg):
        small = cfg.replace(source={"n_pulses": 500})
        frame = simulate_frame(small, "BtoA", balanced_delay(small, "BtoA", -2), seed=2)
        assert frame.n_trials == len(frame.pairs) == 498
        assert frame.n_coincidences <= frame.n_trials
        r, l, tau, rs, ls, hit = frame.pairs[0]
        assert l - r == -2 and abs(tau) < 1.0
        assert isinstance(rs, BB84State) and isinstance(hit, bool)

    def test_event_log(self, cfg):
        small = cfg.replace(source={"n_pulses": 20})
        frame = simulate_frame(small, "AtoB", balanced_delay(small, "AtoB", 2), seed=2)
        buf = io.StringIO()
        frame.write_event_log(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("#")
        assert len(lines) == 1 + frame.n_trials
        fields = lines[1].split()
        assert fields[0] == "0" and fields[1] == "2"
        assert fields[3] in "HVDA" and fields[5] in "01"

    def test_single_jitter_term_option(self, cfg):
        small = cfg.replace(source={"n_pulses": 20_000}, detector={"jitter_terms": 1})
        frame = simulate_frame(small, "AtoB", balanced_delay(small, "AtoB", 2), seed=3)
        assert frame.tau.std() == pytest.approx(150e-3 / 2.35482, rel=0.03)
        two = simulate_frame(cfg.replace(source={"n_pulses": 20_000}), "AtoB",
                             balanced_delay(cfg, "AtoB", 2), seed=3)
        assert two.tau.std() == pytest.approx(math.sqrt(2) * 150e-3 / 2.35482, rel=0.03)
