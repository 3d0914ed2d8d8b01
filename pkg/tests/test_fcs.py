"""Counting statistics: currents, noise, correlations, spectra, tilting."""

import numpy as np
import numpy.testing as npt
import pytest

from jumpfeedback import (
    CountingWeights,
    ValidationError,
    average_current,
    embed,
    extended_liouvillian,
    feedback_steady_state,
    no_feedback,
    noise_background,
    noise_by_quadrature,
    power_spectrum,
    steady_noise,
    tilted_cumulants,
    two_point_correlation,
)

from helpers import random_density, random_model


def poisson_setup(gamma, nu):
    """One-dimensional system emitting marks at rate gamma, weight nu each."""
    model = no_feedback(np.zeros((1, 1)), [np.sqrt(gamma) * np.eye(1)], labels=["a"])
    ext = extended_liouvillian(model)
    weights = CountingWeights.from_channel_weights(("a",), {"a": nu})
    return model, ext, weights


def random_setup(seed, **kwargs):
    rng = np.random.default_rng(seed)
    model = random_model(rng, **kwargs)
    ext = extended_liouvillian(model)
    weights = CountingWeights.from_channel_weights(
        model.channels, rng.normal(size=model.n_channels)
    )
    return model, ext, weights


class TestCountingWeights:
    def test_channel_resolved_roundtrip(self):
        w = CountingWeights.from_channel_weights(("a", "b"), {"a": 2.0})
        assert w.channel_resolved
        npt.assert_array_equal(w.per_channel, [2.0, 0.0])
        npt.assert_array_equal(w.per_transition, [[2.0, 2.0], [0.0, 0.0]])

    def test_transition_resolved_has_no_channel_form(self):
        w = CountingWeights(("a", "b"), [[1.0, 0.0], [0.0, 1.0]])
        assert not w.channel_resolved
        with pytest.raises(ValidationError):
            w.per_channel

    def test_activity_counts_everything(self):
        w = CountingWeights.activity(("a", "b", "c"))
        npt.assert_array_equal(w.per_transition, np.ones((3, 3)))

    def test_unknown_label_rejected(self):
        with pytest.raises(ValidationError, match="unknown"):
            CountingWeights.from_channel_weights(("a",), {"b": 1.0})

    def test_mismatched_channels_rejected_downstream(self):
        _, ext, _ = poisson_setup(1.0, 1.0)
        wrong = CountingWeights.from_channel_weights(("zz",), {"zz": 1.0})
        with pytest.raises(ValidationError, match="channels"):
            average_current(ext, wrong, feedback_steady_state(ext.model, ext=ext))


class TestPoissonProcess:
    """Unit-system emitter: every cumulant is known in closed form."""

    def test_current_and_noise(self):
        gamma, nu = 0.7, 1.5
        model, ext, weights = poisson_setup(gamma, nu)
        ss = feedback_steady_state(model, ext=ext)
        assert abs(average_current(ext, weights, ss) - nu * gamma) < 1e-12
        assert abs(steady_noise(ext, weights, ss) - nu**2 * gamma) < 1e-12
        assert abs(noise_background(ext, weights, ss) - nu**2 * gamma) < 1e-12

    def test_flat_spectrum_and_memoryless_correlation(self):
        gamma, nu = 0.7, 1.5
        model, ext, weights = poisson_setup(gamma, nu)
        ss = feedback_steady_state(model, ext=ext)
        spec = power_spectrum(ext, weights, np.array([-2.0, 0.0, 1.3]), state=ss)
        npt.assert_allclose(spec.values, nu**2 * gamma, atol=1e-12)
        corr = two_point_correlation(ext, weights, np.array([0.0, 0.5, 2.0]), state=ss)
        npt.assert_allclose(corr.values, 0.0, atol=1e-12)
        assert abs(corr.background - nu**2 * gamma) < 1e-12
        assert abs(corr.current - nu * gamma) < 1e-12

    def test_tilted_cumulants_exact(self):
        gamma, nu = 0.7, 1.5
        _, ext, weights = poisson_setup(gamma, nu)
        j, d = tilted_cumulants(ext, weights)
        assert abs(j - nu * gamma) < 1e-10
        assert abs(d - nu**2 * gamma) < 1e-8


class TestCrossRoutes:
    """Independent computations of the same cumulants must agree."""

    def test_spectrum_at_zero_equals_drazin_noise(self):
        _, ext, weights = random_setup(70, dim=2, n_channels=2)
        ss = feedback_steady_state(ext.model, ext=ext)
        d = steady_noise(ext, weights, ss)
        spec = power_spectrum(ext, weights, np.array([0.0]), state=ss)
        assert abs(spec.values[0] - d) < 1e-12 * max(1.0, abs(d))

    def test_quadrature_route_agrees(self):
        _, ext, weights = random_setup(71, dim=2, n_channels=2)
        ss = feedback_steady_state(ext.model, ext=ext)
        d = steady_noise(ext, weights, ss)
        d_quad = noise_by_quadrature(ext, weights, state=ss)
        assert abs(d_quad - d) < 1e-5 * max(1.0, abs(d))

    def test_tilted_route_agrees(self):
        _, ext, weights = random_setup(72, dim=2, n_channels=2, silent=1)
        ss = feedback_steady_state(ext.model, ext=ext)
        j = average_current(ext, weights, ss)
        d = steady_noise(ext, weights, ss)
        jt, dt = tilted_cumulants(ext, weights)
        assert abs(jt - j) < 1e-6 * max(1.0, abs(j))
        assert abs(dt - d) < 1e-4 * max(1.0, abs(d))

    def test_spectrum_is_real_and_even(self):
        _, ext, weights = random_setup(73, dim=2, n_channels=3)
        omegas = np.array([-3.0, -1.0, -0.2, 0.2, 1.0, 3.0])
        spec = power_spectrum(ext, weights, omegas)
        npt.assert_allclose(spec.values[:3], spec.values[:2:-1], atol=1e-10)

    def test_spectrum_tail_approaches_background(self):
        _, ext, weights = random_setup(74, dim=2, n_channels=2)
        spec = power_spectrum(ext, weights, np.array([0.0, 1e5]))
        assert abs(spec.values[1] - spec.background) < 1e-3 * max(
            1.0, abs(spec.background)
        )

    def test_correlation_decays(self):
        _, ext, weights = random_setup(75, dim=2, n_channels=2)
        corr = two_point_correlation(ext, weights, np.array([0.0, 80.0]))
        assert abs(corr.values[1]) < 1e-6 * max(1.0, abs(corr.values[0]))


class TestTransitionResolvedWeights:
    def test_tiled_rows_match_channel_form(self):
        rng = np.random.default_rng(76)
        model = random_model(rng, dim=2, n_channels=2)
        ext = extended_liouvillian(model)
        row = np.array([0.8, -1.1])
        by_channel = CountingWeights.from_channel_weights(model.channels, row)
        by_transition = CountingWeights(
            model.channels, np.tile(row[:, None], (1, 2))
        )
        ss = feedback_steady_state(model, ext=ext)
        assert average_current(ext, by_channel, ss) == average_current(
            ext, by_transition, ss
        )
        assert steady_noise(ext, by_channel, ss) == steady_noise(
            ext, by_transition, ss
        )

    def test_memory_conditioned_weight_selects_transitions(self):
        # count only jumps of channel 0 that happen while the memory reads 1
        rng = np.random.default_rng(77)
        model = random_model(rng, dim=2, n_channels=2)
        ext = extended_liouvillian(model)
        nu = np.zeros((2, 2))
        nu[0, 1] = 1.0
        weights = CountingWeights(model.channels, nu)
        ss = feedback_steady_state(model, ext=ext)
        j = average_current(ext, weights, ss)
        l01 = model.jump_ops[0, 1]
        direct = np.trace(l01 @ ss.blocks[1] @ l01.conj().T).real
        assert abs(j - direct) < 1e-12 * max(1.0, abs(j))


class TestInputValidation:
    def test_negative_lag_rejected(self):
        _, ext, weights = poisson_setup(1.0, 1.0)
        with pytest.raises(ValidationError, match="non-negative"):
            two_point_correlation(ext, weights, np.array([-1.0, 0.0]))

    def test_unsorted_lags_allowed(self):
        _, ext, weights = random_setup(78, dim=2, n_channels=2)
        ss = feedback_steady_state(ext.model, ext=ext)
        taus = np.array([2.0, 0.5, 1.0, 0.0])
        shuffled = two_point_correlation(ext, weights, taus, state=ss)
        ordered = two_point_correlation(ext, weights, np.sort(taus), state=ss)
        npt.assert_allclose(
            shuffled.values, ordered.values[np.argsort(np.argsort(taus))], atol=1e-10
        )

    def test_nonstationary_state_rejected(self):
        rng = np.random.default_rng(79)
        model = random_model(rng, dim=2, n_channels=2)
        ext = extended_liouvillian(model)
        weights = CountingWeights.activity(model.channels)
        bad = embed(model.channels, [0.5, 0.5], random_density(rng, 2))
        with pytest.raises(ValidationError, match="stationary"):
            two_point_correlation(ext, weights, np.array([0.0, 1.0]), state=bad)
