import unittest

import numpy as np
from scipy import stats

from haloscan.acquisition import (
    AcquisitionParams,
    ExpectedSpectrum,
    RawSpectrum,
    SearchTruth,
    SpectrumGrid,
    TuningPlan,
    simulate_step_fast,
)
from haloscan.chain import VisibilityCurve
from haloscan.errors import ConfigError, NumericalError
from haloscan.faxion import SpectralEnvelope
from haloscan.pipeline import (
    AnalysisParams,
    CombinedSpectrum,
    GrandSpectrum,
    ProcessedSpectrum,
    aggregate_trials,
    average_baseline,
    find_candidate,
    fit_histogram,
    grand_spectrum,
    histogram_table,
    normalize,
    sg_filter,
    shift_and_combine,
)

SIGMA = 1 / np.sqrt(32)


def flat_visibility(span_bins: int = 10_000, resolution: float = 1e3) -> VisibilityCurve:
    grid = 2 * np.pi * resolution * np.arange(-span_bins, span_bins + 1)
    return VisibilityCurve(grid, np.ones(grid.size))


def noise_spectra(count: int, size: int, seed: int = 0) -> list[ProcessedSpectrum]:
    rng = np.random.default_rng(seed)
    offsets = np.arange(size) - size // 2
    return [
        ProcessedSpectrum(offsets, rng.normal(0.0, SIGMA, size), SIGMA, step)
        for step in range(count)
    ]


def flat_combined(excess: np.ndarray, sigma: float = 1.0) -> CombinedSpectrum:
    offsets = np.arange(len(excess)) - len(excess) // 2
    return CombinedSpectrum(
        1e3,
        offsets,
        np.asarray(excess, dtype=float),
        np.full(len(excess), sigma),
        np.zeros(len(excess), dtype=bool),
    )


class TestBaseline(unittest.TestCase):
    def setUp(self):
        self.grid = SpectrumGrid(1e3, 999)

    def test_identical_spectra(self):
        psd = np.linspace(1.0, 2.0, self.grid.size)
        spectra = [RawSpectrum(self.grid, psd, step) for step in range(3)]
        np.testing.assert_allclose(average_baseline(spectra), psd)

    def test_spread_shrinks_with_count(self):
        expected = ExpectedSpectrum(self.grid, np.ones(self.grid.size))
        params = AcquisitionParams(32, 1e-3)
        rng = np.random.default_rng(0)
        spectra = (simulate_step_fast(expected, params, rng) for _ in range(400))
        baseline = average_baseline(spectra)
        self.assertAlmostEqual(np.std(baseline) / (SIGMA / 20), 1.0, delta=0.1)

    def test_moving_signal_is_diluted(self):
        spectra = []
        for step in range(100):
            psd = np.ones(self.grid.size)
            psd[10 * step] += 1.0
            spectra.append(RawSpectrum(self.grid, psd, step))
        baseline = average_baseline(spectra)
        self.assertAlmostEqual(baseline.max() - 1.0, 0.01)

    def test_grid_mismatch(self):
        other = SpectrumGrid(1e3, 500)
        spectra = [
            RawSpectrum(self.grid, np.ones(self.grid.size), 0),
            RawSpectrum(other, np.ones(other.size), 1),
        ]
        with self.assertRaises(ConfigError):
            average_baseline(spectra)

    def test_needs_two_spectra(self):
        with self.assertRaises(ConfigError):
            average_baseline([RawSpectrum(self.grid, np.ones(self.grid.size), 0)])


class TestSavitzkyGolay(unittest.TestCase):
    def test_polynomial_is_exact(self):
        x = np.linspace(-1.0, 1.0, 2001)
        polynomial = 3 - 2 * x + 0.5 * x**2 - 4 * x**3 + x**4
        np.testing.assert_allclose(sg_filter(polynomial, 301, 4), polynomial, atol=1e-9)

    def test_narrow_bump_is_suppressed(self):
        x = np.arange(-5000, 5001, dtype=float)
        bump = np.exp(-(x**2) / (2 * 3.0**2))
        self.assertGreater(bump.max() / sg_filter(bump, 301, 4).max(), 5.0)

    def test_wide_lorentzian_is_preserved(self):
        x = np.arange(-15000, 15001, dtype=float)
        lorentzian = 1 / (1 + (x / 4800) ** 2)
        error = np.abs(sg_filter(lorentzian, 301, 4) - lorentzian).max()
        self.assertLess(error, 0.01)

    def test_invalid_window(self):
        with self.assertRaises(ConfigError):
            sg_filter(np.ones(100), 30, 4)
        with self.assertRaises(ConfigError):
            sg_filter(np.ones(100), 5, 5)
        with self.assertRaises(ConfigError):
            sg_filter(np.ones(100), 301, 4)
        with self.assertRaises(ConfigError):
            AnalysisParams(sg_window=31, sg_order=31)


class TestNormalize(unittest.TestCase):
    def setUp(self):
        self.grid = SpectrumGrid(1e3, 999)
        self.params = AcquisitionParams(32, 1e-3)

    def test_baseline_gives_zero(self):
        psd = np.linspace(1.0, 3.0, self.grid.size)
        processed = normalize(RawSpectrum(self.grid, psd, 0), psd, self.params)
        np.testing.assert_allclose(processed.excess, 0.0, atol=1e-15)
        self.assertEqual(processed.sigma, self.params.radiometer_sigma)

    def test_pure_noise_spread(self):
        grid = SpectrumGrid(1e3, 10_000)
        mean = np.full(grid.size, 2.0)
        raw = simulate_step_fast(ExpectedSpectrum(grid, mean), self.params, seed=1)
        processed = normalize(raw, mean, self.params)
        self.assertAlmostEqual(np.std(processed.excess), 0.1768, delta=0.005)

    def test_nonpositive_baseline(self):
        raw = RawSpectrum(self.grid, np.ones(self.grid.size), 0)
        baseline = np.ones(self.grid.size)
        baseline[5] = 0.0
        with self.assertRaises(NumericalError):
            normalize(raw, baseline, self.params)


class TestShiftAndCombine(unittest.TestCase):
    def setUp(self):
        self.plan = TuningPlan(10e3, 1e6, 100e3)

    def test_single_spectrum(self):
        plan = TuningPlan(10e3, 10e3, 10e3)
        spectra = noise_spectra(1, 501)
        combined = shift_and_combine(spectra, plan, flat_visibility(), 1e3, mask_fraction=0.0)
        covered = ~combined.mask
        np.testing.assert_allclose(
            combined.significance[covered], spectra[0].excess / SIGMA, rtol=1e-12
        )

    def test_noise_combines_to_unit_significance(self):
        spectra = noise_spectra(self.plan.step_count, 2001, seed=4)
        combined = shift_and_combine(spectra, self.plan, flat_visibility(), 1e3)
        significance = combined.significance[~combined.mask]
        self.assertAlmostEqual(np.std(significance), 1.0, delta=0.05)
        self.assertGreater(stats.kstest(significance, "norm").pvalue, 0.001)

    def test_stationary_signal_adds_up(self):
        size = 2001
        offsets = np.arange(size) - size // 2
        initial_bin = -700
        spectra = []
        for step in range(self.plan.step_count):
            excess = np.zeros(size)
            excess[initial_bin + 10 * step + size // 2] = 0.3
            spectra.append(ProcessedSpectrum(offsets, excess, SIGMA, step))

        combined = shift_and_combine(spectra, self.plan, flat_visibility(), 1e3)
        position = int(np.flatnonzero(combined.bin_offsets == initial_bin)[0])
        self.assertAlmostEqual(combined.excess[position], 0.3)
        self.assertAlmostEqual(np.nansum(combined.excess), 0.3)

    def test_visibility_rescales_and_weights(self):
        size = 201
        offsets = np.arange(size) - size // 2
        grid = 2 * np.pi * 1e3 * np.arange(-1000, 1001)
        alpha = np.where(np.abs(grid) <= 2 * np.pi * 50e3, 1.0, 0.5)
        visibility = VisibilityCurve(grid, alpha)
        plan = TuningPlan(10e3, 10e3, 10e3)

        excess = 0.2 * visibility.at(2 * np.pi * 1e3 * offsets)
        spectra = [ProcessedSpectrum(offsets, excess, SIGMA, step) for step in range(2)]
        combined = shift_and_combine(spectra, plan, visibility, 1e3, mask_fraction=0.0)
        np.testing.assert_allclose(combined.excess[~combined.mask], 0.2)

    def test_order_is_enforced(self):
        spectra = noise_spectra(3, 101)
        with self.assertRaises(ConfigError):
            shift_and_combine(spectra[::-1], self.plan, flat_visibility(), 1e3)

    def test_shift_must_be_whole_bins(self):
        with self.assertRaises(ConfigError):
            shift_and_combine(noise_spectra(2, 101), self.plan, flat_visibility(), 3e3)

    def test_zero_visibility(self):
        grid = np.linspace(-1.0, 1.0, 3)
        with self.assertRaises(NumericalError):
            shift_and_combine(
                noise_spectra(2, 101), self.plan, VisibilityCurve(grid, np.zeros(3)), 1e3
            )

    def test_low_weight_bins_are_masked(self):
        spectra = noise_spectra(self.plan.step_count, 101)
        combined = shift_and_combine(spectra, self.plan, flat_visibility(), 1e3, 0.5)
        self.assertTrue(np.all(np.isnan(combined.excess[combined.mask])))
        self.assertTrue(combined.mask[0])
        self.assertFalse(combined.mask[len(combined.mask) // 2])


class TestGrandSpectrum(unittest.TestCase):
    def test_delta_envelope_is_identity(self):
        rng = np.random.default_rng(3)
        combined = flat_combined(rng.normal(0.0, 1.0, 5001))
        grand = grand_spectrum(combined, SpectralEnvelope.delta(1e3), mask_fraction=0.0)
        np.testing.assert_allclose(grand.statistic, combined.significance, rtol=1e-9, atol=1e-9)

    def test_matched_filter_sum(self):
        bins = np.arange(-2, 5)
        weights = np.array([0.05, 0.1, 0.3, 0.25, 0.15, 0.1, 0.05])
        envelope = SpectralEnvelope(1e3, bins, weights / 1e3)

        centre = 200
        excess = 1e-3 * np.random.default_rng(2).normal(size=401)
        excess[centre - 10 : centre + 11] = 0.0
        excess[centre + bins] = 2.0 * weights
        combined = flat_combined(excess, sigma=0.5)
        grand = grand_spectrum(combined, envelope, mask_fraction=0.0)

        expected = 2.0 * np.sqrt(np.sum(weights**2)) / 0.5
        self.assertAlmostEqual(grand.statistic[centre], expected, places=9)
        self.assertEqual(int(np.argmax(grand.statistic)), centre)

    def test_noise_has_unit_spread(self):
        rng = np.random.default_rng(8)
        combined = flat_combined(rng.normal(0.0, 1.0, 20001))
        bins = np.arange(-3, 20)
        density = stats.gamma.pdf(bins + 0.5, 1.5, scale=4.0)
        envelope = SpectralEnvelope(1e3, bins, density / density.sum() / 1e3)
        grand = grand_spectrum(combined, envelope)
        self.assertAlmostEqual(np.nanstd(grand.excess), 1.0, delta=0.05)
        self.assertAlmostEqual(np.nanstd(grand.statistic), 1.0, delta=0.05)

    def test_envelope_wider_than_spectrum(self):
        combined = flat_combined(np.zeros(5))
        envelope = SpectralEnvelope(1e3, np.arange(10), np.full(10, 1e-4))
        with self.assertRaises(ConfigError):
            grand_spectrum(combined, envelope)

    def test_resolution_mismatch(self):
        with self.assertRaises(ConfigError):
            grand_spectrum(flat_combined(np.zeros(50)), SpectralEnvelope.delta(200.0))

    def test_masked_bins_are_skipped(self):
        rng = np.random.default_rng(1)
        excess = rng.normal(0.0, 1.0, 1001)
        mask = np.zeros(1001, dtype=bool)
        mask[:100] = True
        excess[:100] = np.nan
        combined = CombinedSpectrum(
            1e3, np.arange(1001), excess, np.where(mask, np.nan, 1.0), mask
        )
        grand = grand_spectrum(combined, SpectralEnvelope.delta(1e3))
        self.assertTrue(np.all(np.isnan(grand.excess[:100])))
        self.assertTrue(np.all(np.isfinite(grand.excess[100:])))


def grand_from(values, offsets=None) -> GrandSpectrum:
    values = np.asarray(values, dtype=float)
    if offsets is None:
        offsets = np.arange(len(values))
    return GrandSpectrum(1e3, offsets, values, values, 1.0, np.isnan(values))


class TestFindCandidate(unittest.TestCase):
    def test_single_peak(self):
        outcome = find_candidate(grand_from([0.1, -0.3, 4.0, 0.2]))
        self.assertEqual(outcome.best_bin_offset, 2e3)
        self.assertEqual(outcome.best_excess, 4.0)

    def test_ties_go_to_lowest_offset(self):
        outcome = find_candidate(grand_from([1.0, 3.0, 0.0, 3.0]))
        self.assertEqual(outcome.best_bin_offset, 1e3)

    def test_masked_bins_are_ignored(self):
        outcome = find_candidate(grand_from([np.nan, 1.0, np.nan, 2.0]))
        self.assertEqual(outcome.best_bin_offset, 3e3)

    def test_all_masked(self):
        with self.assertRaises(NumericalError):
            find_candidate(grand_from([np.nan, np.nan]))

    def test_truth_excess_and_hit(self):
        grand = grand_from([0.0, 1.0, 5.0, 2.0, 0.5], offsets=np.arange(-2, 3))
        truth = SearchTruth(0, 1e3, 10e3)
        outcome = find_candidate(grand, 7, truth, match_width=1e3)
        self.assertEqual(outcome.trial_index, 7)
        self.assertEqual(outcome.faxion_excess, 2.0)
        self.assertTrue(outcome.truth_hit)

        far = find_candidate(grand, 7, SearchTruth(0, -2e3, 10e3), match_width=1e3)
        self.assertEqual(far.faxion_excess, 0.0)
        self.assertFalse(far.truth_hit)

    def test_truth_outside_spectrum(self):
        outcome = find_candidate(grand_from([1.0, 2.0]), truth=SearchTruth(0, 1e6, 10e3))
        self.assertTrue(np.isnan(outcome.faxion_excess))
        self.assertFalse(outcome.truth_hit)


class TestHistogram(unittest.TestCase):
    def test_fit_and_errors(self):
        values = np.random.default_rng(0).normal(6.0, 1.0, 400)
        fit = fit_histogram(values)
        self.assertAlmostEqual(fit.mean, np.mean(values))
        self.assertAlmostEqual(fit.std, np.std(values))
        self.assertAlmostEqual(fit.mean_error, fit.std / 20)
        self.assertAlmostEqual(fit.std_error, fit.std / np.sqrt(800))

    def test_too_few_trials(self):
        with self.assertRaises(NumericalError):
            fit_histogram([1.0])

    def test_degenerate(self):
        with self.assertRaises(NumericalError):
            fit_histogram([2.0, 2.0, 2.0])

    def test_table_peak_normalized(self):
        values = np.random.default_rng(1).normal(0.0, 1.0, 1000)
        table = histogram_table(np.append(values, np.nan), bins=10)
        self.assertEqual(table["count"].sum(), 1000)
        self.assertEqual(table["normalized_count"].max(), 1.0)

    def test_identical_configurations(self):
        rng = np.random.default_rng(5)
        reference = rng.normal(6.0, 1.0, 200)
        enhanced = rng.normal(6.0, 1.0, 200)
        aggregate = aggregate_trials(reference, enhanced)
        self.assertLess(abs(aggregate.enhancement - 1.0), 3 * aggregate.enhancement_error)

    def test_enhancement_error_propagation(self):
        reference = np.array([1.0, 3.0])
        enhanced = np.array([2.0, 6.0])
        aggregate = aggregate_trials(reference, enhanced)
        self.assertAlmostEqual(aggregate.enhancement, 4.0)
        relative = np.hypot(
            aggregate.reference.mean_error / 2.0, aggregate.enhanced.mean_error / 4.0
        )
        self.assertAlmostEqual(aggregate.enhancement_error, 8.0 * relative)

    def test_zero_reference_mean(self):
        with self.assertRaises(NumericalError):
            aggregate_trials([-1.0, 1.0], [2.0, 3.0])
