"""Tests for the channel model expectations and the Monte-Carlo session."""

from __future__ import annotations

import math

import numpy as np
import pytest

from decoyqkd.sim import (
    REFERENCE_DETECTIONS,
    REFERENCE_DURATION_H,
    REFERENCE_DUTY_CYCLE,
    REFERENCE_KEY_TARGETS,
    REFERENCE_SIFT_RATIO,
    REFERENCE_SIFTED_TOTAL,
    REFERENCE_ZERO_FRACTION,
    ValidationError,
    expected_statistics,
    expected_tally,
    link_budget,
    reference_model,
    reference_scheme,
    simulate_session,
)


def test_reference_constants():
    assert REFERENCE_DETECTIONS == (341, 5729, 80776)
    assert REFERENCE_SIFTED_TOTAL == 40538
    assert REFERENCE_KEY_TARGETS == (6127, 3990)
    assert REFERENCE_ZERO_FRACTION == 0.494
    assert REFERENCE_DURATION_H == 5.6
    assert REFERENCE_SIFT_RATIO == REFERENCE_SIFTED_TOTAL / sum(REFERENCE_DETECTIONS)


class TestLinkBudget:
    def test_loss_decomposition(self):
        model = reference_model(25.0)
        budget = link_budget(model)
        fiber_db = model.fiber_length_km * model.attenuation_db_per_km
        detector_db = -10.0 * math.log10(model.detector_efficiency)
        assert budget.total_loss_db == pytest.approx(fiber_db + detector_db, rel=1e-12)
        assert budget.eta == pytest.approx(
            model.detector_efficiency * 10.0 ** (-fiber_db / 10.0), rel=1e-12
        )

    def test_noise_window(self):
        model = reference_model(25.0)
        budget = link_budget(model)
        expected = (
            model.dark_count_rate_hz + model.background_rate_hz
        ) * model.timing_window_s
        assert budget.dark_prob_per_window == pytest.approx(expected, rel=1e-12)

    def test_longer_fiber_means_less_transmission(self):
        etas = [link_budget(reference_model(km)).eta for km in (10, 50, 100, 150)]
        assert etas == sorted(etas, reverse=True)


class TestExpectedStatistics:
    def test_vacuum_yield_is_noise_floor(self):
        model = reference_model(25.0)
        stats = expected_statistics(model, reference_scheme())
        assert stats.photon_yield(0) == pytest.approx(stats.noise_prob, rel=1e-12)
        assert stats.noise_prob == pytest.approx(
            link_budget(model).dark_prob_per_window, rel=1e-12
        )

    def test_photon_yield_formula(self):
        model = reference_model(25.0)
        stats = expected_statistics(model, reference_scheme())
        eta = link_budget(model).eta
        c = stats.noise_prob
        for n in range(6):
            expected = 1.0 - (1.0 - c) * (1.0 - eta) ** n
            assert stats.photon_yield(n) == pytest.approx(expected, rel=1e-12)

    def test_photon_error_formula(self):
        model = reference_model(25.0)
        stats = expected_statistics(model, reference_scheme())
        eta = link_budget(model).eta
        c = stats.noise_prob
        for n in range(1, 6):
            arrival = 1.0 - (1.0 - eta) ** n
            expected = (0.5 * c + model.intrinsic_error_rate * arrival) / stats.photon_yield(n)
            assert stats.photon_error_rate(n) == pytest.approx(expected, rel=1e-12)

    def test_yields_monotone_in_photon_number(self):
        stats = expected_statistics(reference_model(80.0), reference_scheme())
        values = [stats.photon_yield(n) for n in range(12)]
        assert values == sorted(values)

    def test_error_rate_approaches_intrinsic_floor(self):
        model = reference_model(25.0)
        stats = expected_statistics(model, reference_scheme())
        rates = [stats.photon_error_rate(n) for n in range(1, 12)]
        assert rates == sorted(rates, reverse=True)
        assert rates[-1] == pytest.approx(model.intrinsic_error_rate, rel=0.02)

    def test_level_yields_mix_poisson(self):
        # the per-level yield must equal the photon-number mixture
        model = reference_model(60.0)
        scheme = reference_scheme()
        stats = expected_statistics(model, scheme)
        for j, mu in enumerate(scheme.mus):
            mixture = sum(
                math.exp(-mu) * mu**n / math.factorial(n) * stats.photon_yield(n)
                for n in range(80)
            )
            assert stats.yields[j] == pytest.approx(mixture, rel=1e-9)


class TestExpectedTally:
    def test_reproduces_calibration_tally(self, calibration):
        tally = expected_tally(
            calibration.model,
            calibration.scheme,
            calibration.pulses,
            sift_ratio=calibration.sift_ratio,
            zero_fraction=calibration.zero_fraction,
        )
        assert tally.to_json() == calibration.tally.to_json()
        assert tally.reconstructed

    def test_split_by_send_probabilities(self):
        scheme = reference_scheme()
        tally = expected_tally(reference_model(25.0), scheme, 1_000_000)
        sents = [level.sent for level in tally.levels]
        assert sum(sents) == 1_000_000
        for sent, prob in zip(sents, scheme.send_probs):
            assert sent == pytest.approx(1_000_000 * prob, abs=1.0)

    def test_zero_counts_follow_requested_fraction(self):
        tally = expected_tally(
            reference_model(25.0), reference_scheme(), 2_000_000, zero_fraction=0.3
        )
        for basis in ("X", "Z"):
            sifted = sum(level.sifted[basis] for level in tally.levels)
            assert tally.zeros[basis] == pytest.approx(0.3 * sifted, abs=1.0)

    def test_rejects_negative_pulses(self):
        with pytest.raises(ValidationError):
            expected_tally(reference_model(), reference_scheme(), -5)


class TestSimulateSession:
    def test_counts_track_expectation(self):
        # Monte-Carlo detections per level vs the analytic expectation,
        # in units of the binomial standard deviation.
        model = reference_model(25.0)
        scheme = reference_scheme()
        pulses = 10_000_000
        tally, _ = simulate_session(model, scheme, pulses, 99)
        expectation = expected_tally(model, scheme, pulses)
        for j in range(scheme.n_levels):
            sent = expectation.levels[j].sent
            p = expectation.levels[j].detected_total() / sent
            got = tally.levels[j].detected_total()
            sigma = math.sqrt(sent * p * (1.0 - p))
            assert abs(got - sent * p) < 5.0 * sigma

    def test_raw_keys_match_tally(self):
        tally, keys = simulate_session(reference_model(25.0), reference_scheme(), 2_000_000, 7)
        assert keys.key_levels == (2,)
        for basis in ("X", "Z"):
            alice = keys.alice[basis]
            bob = keys.bob[basis]
            assert alice.shape == bob.shape
            sifted = sum(tally.levels[j].sifted[basis] for j in keys.key_levels)
            errors = sum(tally.levels[j].errors[basis] for j in keys.key_levels)
            assert len(alice) == sifted
            assert int((alice != bob).sum()) == errors
            # tally zeros cover every sifted bit, keyed or not
            assert tally.zeros[basis] >= int((alice == 0).sum())

    def test_deterministic_per_seed(self):
        model, scheme = reference_model(25.0), reference_scheme()
        t1, k1 = simulate_session(model, scheme, 500_000, 31)
        t2, k2 = simulate_session(model, scheme, 500_000, 31)
        assert t1.to_json() == t2.to_json()
        assert all((k1.alice[b] == k2.alice[b]).all() for b in ("X", "Z"))
        t3, _ = simulate_session(model, scheme, 500_000, 32)
        assert t3.to_json() != t1.to_json()

    def test_simulated_tally_is_not_flagged_reconstructed(self):
        tally, _ = simulate_session(reference_model(25.0), reference_scheme(), 100_000, 1)
        assert not tally.reconstructed

    def test_empty_session(self):
        tally, keys = simulate_session(reference_model(25.0), reference_scheme(), 0, 1)
        assert all(level.sent == 0 for level in tally.levels)
        assert all(len(keys.alice[b]) == 0 for b in ("X", "Z"))

    def test_key_levels_override(self):
        tally, keys = simulate_session(
            reference_model(25.0), reference_scheme(), 500_000, 3, key_levels=(1, 2)
        )
        assert keys.key_levels == (1, 2)
        for basis in ("X", "Z"):
            sifted = sum(tally.levels[j].sifted[basis] for j in (1, 2))
            assert len(keys.alice[basis]) == sifted

    def test_zero_bias_shifts_bit_balance(self):
        model, scheme = reference_model(25.0), reference_scheme()
        biased, _ = simulate_session(model, scheme, 2_000_000, 7, zero_bias=0.2)
        balanced, _ = simulate_session(model, scheme, 2_000_000, 7)
        assert biased.zero_fraction("X") < 0.32
        assert 0.42 < balanced.zero_fraction("X") < 0.58

    def test_zero_bias_domain(self):
        with pytest.raises(ValidationError):
            simulate_session(reference_model(), reference_scheme(), 100, 1, zero_bias=1.5)

    def test_bound_soundness_on_small_batch(self):
        # simulated sessions must not certify better-than-true values;
        # the acceptance suite runs the full 500-session version
        from decoyqkd.core import ConfidenceConfig
        from decoyqkd.decoy import single_photon_bounds

        model = reference_model(25.0)
        scheme = reference_scheme()
        stats = expected_statistics(model, scheme)
        y1_true = stats.photon_yield(1)
        b1_true = stats.photon_error_rate(1)
        cfg = ConfidenceConfig()
        sound = 0
        for seed in range(20):
            tally, _ = simulate_session(model, scheme, 1_000_000, 4200 + seed)
            bounds = single_photon_bounds(tally, scheme, cfg)
            if not bounds.feasible:
                continue
            ok_y = bounds.y1_lower <= y1_true
            ok_b = all(
                bounds.b1_tight_by_basis[b] >= b1_true for b in ("X", "Z")
            )
            sound += ok_y and ok_b
        assert sound >= 19


class TestCalibration:
    def test_frozen_operating_point(self, calibration):
        assert calibration.pulses == 23836243437
        assert calibration.duty_cycle == pytest.approx(0.11823533450892858, rel=1e-9)
        assert calibration.background_rate_hz == pytest.approx(586.00045754661, rel=1e-6)
        assert calibration.e_int == pytest.approx(0.005092440316693087, rel=1e-6)
        assert calibration.sift_ratio == REFERENCE_SIFT_RATIO
        assert calibration.zero_fraction == REFERENCE_ZERO_FRACTION

    def test_duty_cycle_matches_pulse_count(self, calibration):
        clock = calibration.model.clock_rate_hz
        implied = round(REFERENCE_DURATION_H * 3600.0 * clock * calibration.duty_cycle)
        assert implied == calibration.pulses

    def test_detections_close_to_targets(self, calibration):
        for level, target in zip(calibration.tally.levels, REFERENCE_DETECTIONS):
            assert abs(level.detected_total() / target - 1.0) < 0.01
        sifted = sum(sum(level.sifted.values()) for level in calibration.tally.levels)
        assert abs(sifted / REFERENCE_SIFTED_TOTAL - 1.0) < 0.001

    def test_key_totals(self, calibration):
        assert calibration.analysis.total_tight == 5342
        assert calibration.analysis.total_worst == 4526
        assert calibration.diagnostics["key_totals_model"] == [5342, 4526]

    def test_diagnostics_shape(self, calibration):
        assert calibration.diagnostics["converged"] is True
        assert set(calibration.diagnostics) == {
            "converged",
            "detections_model",
            "detections_target",
            "fit_objective",
            "key_targets",
            "key_totals_model",
            "sifted_model",
            "sifted_target",
        }
        assert calibration.diagnostics["detections_target"] == list(REFERENCE_DETECTIONS)
