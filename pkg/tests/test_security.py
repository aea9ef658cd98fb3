import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homsync.config import ExperimentConfig
from homsync.core import BB84State, expected_floor, hom_dip, postselected_min
from homsync.errors import InsufficientDataError
from homsync.pipeline import check_channel
from homsync.security import (
    attack_dip,
    attack_sweep,
    detect_eavesdropper,
    ir_dip,
    ir_postselected_floor,
    ir_transform,
    measure_in_basis,
    sample_postselected,
)

from .conftest import phase_average_coincidence

IR_FLOOR_1 = 0.2542541598109957

# Jones vectors, independent of the library's overlap table.
JONES = {
    0: np.array([1.0, 0.0]),
    1: np.array([0.0, 1.0]),
    2: np.array([1.0, 1.0]) / math.sqrt(2),
    3: np.array([1.0, -1.0]) / math.sqrt(2),
}


def ir_floor_oracle(mu):
    """Enumerate prepared state, Eve's basis and her outcome explicitly."""
    total = 0.0
    for prep in range(4):
        for eve_basis in (0, 1):
            for outcome in (0, 1):
                resent = 2 * eve_basis + outcome
                p_outcome = abs(JONES[resent] @ JONES[prep]) ** 2
                s = abs(JONES[resent] @ JONES[prep])
                total += 0.25 * 0.5 * p_outcome * phase_average_coincidence(mu, mu, 0.5, s)
    return total


class TestInterceptResend:
    def test_distribution_for_h(self):
        rng = np.random.default_rng(0)
        n = 400_000
        out = ir_transform(np.zeros(n, dtype=np.int8), rng)
        frac = np.bincount(out, minlength=4) / n
        band = 4 * math.sqrt(0.25 * 0.75 / n)
        assert frac[BB84State.V] == 0.0
        assert frac[BB84State.H] == pytest.approx(0.5, abs=band)
        assert frac[BB84State.D] == pytest.approx(0.25, abs=band)
        assert frac[BB84State.A] == pytest.approx(0.25, abs=band)

    def test_scalar(self):
        out = ir_transform(BB84State.D, np.random.default_rng(1))
        assert isinstance(out, BB84State) and out is not BB84State.A

    def test_uniform_in_uniform_out(self):
        rng = np.random.default_rng(2)
        n = 400_000
        out = ir_transform(rng.integers(0, 4, n, dtype=np.int8), rng)
        np.testing.assert_allclose(np.bincount(out, minlength=4) / n, 0.25,
                                   atol=4 * math.sqrt(0.25 * 0.75 / n))

    def test_quarter_error_rate(self):
        rng = np.random.default_rng(3)
        n = 1_000_000
        prepared = rng.integers(0, 4, n, dtype=np.int8)
        resent = ir_transform(prepared, rng)
        bob = measure_in_basis(resent, prepared // 2, rng)
        err = np.mean(bob != prepared)
        assert err == pytest.approx(0.25, abs=4 * math.sqrt(0.25 * 0.75 / n))

    def test_measurement_in_own_basis_is_faithful(self):
        states = np.array([0, 1, 2, 3] * 10, dtype=np.int8)
        out = measure_in_basis(states, states // 2, np.random.default_rng(4))
        np.testing.assert_array_equal(out, states)


class TestFloors:
    def test_reference_value(self):
        assert ir_floor_oracle(1.0) == pytest.approx(IR_FLOOR_1, rel=1e-12)
        assert ir_postselected_floor(1.0) == pytest.approx(IR_FLOOR_1, rel=1e-12)

    @pytest.mark.parametrize("mu", [0.05, 0.3, 0.8, 1.7, 4.0])
    def test_against_oracle(self, mu):
        assert ir_postselected_floor(mu) == pytest.approx(ir_floor_oracle(mu), rel=1e-10, abs=1e-15)

    def test_zero(self):
        assert ir_postselected_floor(0.0) == 0.0

    @given(st.floats(1e-3, 10.0))
    @settings(max_examples=200)
    def test_ordering(self, mu):
        assert postselected_min(mu) < ir_postselected_floor(mu) <= expected_floor(mu)

    def test_ir_dip_above_honest(self):
        taus = np.linspace(-200, 200, 161)
        sig = 1 / 20
        honest = hom_dip(1.0, 1.0, taus, sig)
        attacked = ir_dip(1.0, taus, sig)
        assert np.all(attacked >= honest - 1e-15)
        assert attacked[80] == pytest.approx(IR_FLOOR_1, rel=1e-12)
        # far wings coincide: both see distinguishable pulses
        assert attacked[0] == pytest.approx(honest[0], abs=1e-6)


class TestDetection:
    def test_exact_honest_floor_not_flagged(self):
        v = detect_eavesdropper((postselected_min(1.0), 10**12), 1.0)
        assert not v.flagged and v.z_score == 0.0

    def test_ir_floor_flagged(self):
        v = detect_eavesdropper((IR_FLOOR_1, 20_000), 1.0)
        assert v.flagged and v.z_score > 10

    def test_threshold_cap(self):
        v = detect_eavesdropper((0.23, 10), 1.0)
        assert v.threshold == pytest.approx(0.5 * (postselected_min(1.0) + IR_FLOOR_1))

    def test_threshold_three_sigma(self):
        n = 20_000
        p = postselected_min(1.0)
        v = detect_eavesdropper((p, n), 1.0)
        assert v.threshold == pytest.approx(p + 3.0 * math.sqrt(p * (1 - p) / n), rel=1e-3)

    def test_no_trials(self):
        with pytest.raises(InsufficientDataError):
            detect_eavesdropper((0.0, 0), 1.0)

    def test_bad_significance(self):
        with pytest.raises(ValueError):
            detect_eavesdropper((0.2, 100), 1.0, significance=0.7)

    def test_false_alarm_rate(self):
        rng = np.random.default_rng(5)
        n, mu = 20_000, 1.0
        flags = sum(
            detect_eavesdropper((sample_postselected(mu, n, rng) / n, n), mu).flagged
            for _ in range(300)
        )
        assert flags <= 5


class TestSweeps:
    def test_sweep_within_errors(self):
        rows = attack_sweep([0.1, 0.5, 1.0, 2.0], n_trials=40_000, seed=1)
        for r in rows:
            assert abs(r.honest_mc - r.honest_analytic) < 4 * r.honest_err
            assert abs(r.ir_mc - r.ir_analytic) < 4 * r.ir_err
            assert r.floor_eq10 == expected_floor(r.mu)

    def test_sweep_zero_mu(self):
        (row,) = attack_sweep([0.0], n_trials=100, seed=1)
        assert row.honest_mc == row.ir_mc == row.honest_analytic == row.ir_analytic == 0.0

    def test_sweep_deterministic(self):
        assert attack_sweep([1.0], 1000, seed=9) == attack_sweep([1.0], 1000, seed=9)

    def test_dip_within_errors(self):
        rows = attack_dip(1.0, [-20.0, 0.0, 20.0], 1 / 20, n_trials=40_000, seed=2)
        for r in rows:
            assert abs(r.honest_mc - r.honest_analytic) < 4 * max(r.honest_err, 1e-3)
            assert abs(r.ir_mc - r.ir_analytic) < 4 * max(r.ir_err, 1e-3)
        assert rows[1].ir_mc > rows[1].honest_mc


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig().replace(source={"n_pulses": 100_000})


class TestChannelCheck:
    def test_honest(self, cfg):
        chk = check_channel(cfg, "none")
        assert not chk.verdict.flagged and chk.warning == ""

    def test_attacked_both_bases_elevated(self, cfg):
        chk = check_channel(cfg, "intercept_resend")
        honest = postselected_min(cfg.mu_eff)
        assert chk.verdict.flagged
        assert chk.rate_rectilinear > honest + 0.02
        assert chk.rate_diagonal > honest + 0.02

    def test_low_trial_warning(self, cfg):
        chk = check_channel(cfg.replace(source={"n_pulses": 600}), "none")
        assert "post-selected trials" in chk.warning

    def test_empty(self, cfg):
        with pytest.raises(InsufficientDataError):
            check_channel(cfg.replace(source={"n_pulses": 0}), "none")
