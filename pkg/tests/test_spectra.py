import numpy as np
import pytest

from spekit import (
    PeakModel,
    PeakOverlapError,
    Spectrum,
    ValidationError,
    classify_polarization,
    debye_waller,
    fit_peaks,
    read_spectrum_csv,
    write_spectrum_csv,
)
from spekit.fitters import MODELS


def make_spectrum(peaks, *, wl=None, baseline=(0.0, 0.0), noise=0.0, seed=None,
                  temperature=None):
    if wl is None:
        wl = np.arange(570.0, 620.0, 0.02)
    counts = baseline[0] + baseline[1] * wl
    for p in peaks:
        counts = counts + p.curve(wl)
    if seed is not None:
        rng = np.random.default_rng(seed)
        counts = counts + rng.normal(0.0, noise * np.maximum(counts, 1.0))
    return Spectrum(wl, np.clip(counts, 0.0, None), temperature=temperature)


ZPL = PeakModel("lorentzian", center=581.2, fwhm=0.095, area=33.0)
PSB = PeakModel("lorentzian", center=589.2, fwhm=4.0, area=67.0)


class TestTypes:
    def test_unsorted_wavelengths_rejected(self):
        with pytest.raises(ValidationError):
            Spectrum(np.array([2.0, 1.0]), np.array([0.0, 0.0]))

    def test_bad_shape_rejected(self):
        with pytest.raises(ValidationError):
            PeakModel("voigt", 581.0, 0.1, 1.0)

    def test_peak_areas_positive(self):
        with pytest.raises(ValidationError):
            PeakModel("lorentzian", 581.0, 0.1, 0.0)


class TestFitPeaks:
    def test_single_lorentzian_exact_recovery(self):
        # cold ZPL of the blue emitter: 581.2 nm, 0.095 nm linewidth
        wl = np.arange(580.0, 582.5, 0.005)
        spec = make_spectrum([ZPL], wl=wl)
        (peak,) = fit_peaks(spec, 1, "lorentzian", exclusion_windows=())
        assert peak.center == pytest.approx(581.2, abs=1e-6)
        assert peak.fwhm == pytest.approx(0.095, rel=1e-6)
        assert peak.area == pytest.approx(33.0, rel=1e-6)

    def test_two_gaussians_recovered(self):
        a = PeakModel("gaussian", center=595.0, fwhm=1.5, area=50.0)
        b = PeakModel("gaussian", center=605.0, fwhm=2.5, area=20.0)
        spec = make_spectrum([a, b])
        peaks = fit_peaks(spec, 2, "gaussian", exclusion_windows=())
        assert peaks[0].center == pytest.approx(595.0, abs=1e-6)
        assert peaks[1].center == pytest.approx(605.0, abs=1e-6)
        assert peaks[0].fwhm == pytest.approx(1.5, rel=1e-6)
        assert peaks[1].area == pytest.approx(20.0, rel=1e-6)

    def test_zpl_plus_psb_centers(self):
        # red-shifted (~8 nm) phonon side band next to the ZPL
        spec = make_spectrum([ZPL, PSB], baseline=(5.0, 0.0), noise=0.02, seed=62)
        peaks = fit_peaks(spec, 2, "lorentzian", exclusion_windows=())
        assert abs(peaks[0].center - 581.2) < 0.05
        assert abs(peaks[1].center - 589.2) < 0.05

    def test_exclusion_window_removes_contamination(self):
        # a narrow Raman artifact inside the default exclusion region must
        # not corrupt the PSB fit when the window is applied
        raman = PeakModel("lorentzian", center=585.0, fwhm=0.2, area=30.0)
        spec = make_spectrum([ZPL, PSB, raman])
        peaks = fit_peaks(spec, 2, "lorentzian")
        assert abs(peaks[0].center - 581.2) < 0.05
        assert abs(peaks[1].center - 589.2) < 0.2
        assert peaks[1].area == pytest.approx(67.0, rel=0.05)

    def test_overlapping_seeds_rejected(self):
        both = PeakModel("lorentzian", center=600.0, fwhm=2.0, area=50.0)
        spec = make_spectrum([both])
        with pytest.raises((PeakOverlapError, ValidationError)):
            fit_peaks(spec, 2, "lorentzian", exclusion_windows=())

    def test_area_consistency_with_numerical_integral(self):
        # trapezoid integral on a grid 10x finer than the linewidth matches
        # the analytic area within 0.1% (window wide enough for tails)
        for shape in ("lorentzian", "gaussian"):
            peak = PeakModel(shape, center=600.0, fwhm=1.0, area=42.0)
            span = 800.0 if shape == "lorentzian" else 10.0
            wl = np.arange(600.0 - span, 600.0 + span, 0.1)
            integral = np.trapezoid(peak.curve(wl), wl)
            assert integral == pytest.approx(42.0, rel=1e-3), shape


class TestDebyeWaller:
    def test_arithmetic(self):
        decomp = debye_waller(ZPL, [PSB])
        assert decomp.dwf == pytest.approx(0.33, abs=1e-12)
        assert decomp.I_TOT == pytest.approx(100.0, rel=1e-12)

    def test_psb_vanishing_limit(self):
        tiny = PeakModel("lorentzian", center=589.0, fwhm=1.0, area=1e-12)
        decomp = debye_waller(ZPL, [tiny])
        assert decomp.dwf == pytest.approx(1.0, abs=1e-12)

    def test_empty_psb_rejected(self):
        with pytest.raises(ValidationError):
            debye_waller(ZPL, [])

    def test_monotone_in_zpl_area(self):
        dwfs = [
            debye_waller(
                PeakModel("lorentzian", 581.2, 0.095, area), [PSB]
            ).dwf
            for area in (1.0, 10.0, 33.0, 100.0)
        ]
        assert all(a < b for a, b in zip(dwfs, dwfs[1:]))
        assert all(0.0 <= d <= 1.0 for d in dwfs)

    def test_synthetic_spectrum_recovery(self):
        # build a spectrum with true DWF 0.33 and 2% noise; the fitted
        # decomposition recovers it within +-0.01
        spec = make_spectrum([ZPL, PSB], noise=0.02, seed=63)
        peaks = fit_peaks(spec, 2, "lorentzian", exclusion_windows=())
        decomp = debye_waller(peaks[0], peaks[1:])
        assert abs(decomp.dwf - 0.33) < 0.01


class TestClassifyPolarization:
    def test_two_state_paper_case(self):
        result = classify_polarization([45.0, 135.0, 44.0, 136.0], tolerance=5.0)
        assert result.centers[0] == pytest.approx(44.5, abs=1e-9)
        assert result.centers[1] == pytest.approx(135.5, abs=1e-9)
        assert result.orthogonal
        assert not result.degenerate
        assert result.outliers == ()
        assert list(result.assignments) == [0, 1, 0, 1]

    def test_three_state_case_warns(self):
        # the contrasting emitter type has states at 30/90/150 degrees: a
        # two-cluster fit cannot be orthogonal
        with pytest.warns(UserWarning, match="polarization states"):
            result = classify_polarization([30.0, 90.0, 150.0], tolerance=5.0)
        assert not result.orthogonal

    def test_identical_angles_degenerate(self):
        result = classify_polarization([10.0, 10.0])
        assert result.degenerate
        assert result.centers == (10.0,)

    def test_period_invariance(self):
        phis = [44.0, 46.0, 133.0, 137.0, 45.5, 134.5]
        base = classify_polarization(phis)
        shifted = classify_polarization([p + 180.0 for p in phis])
        assert np.array_equal(base.assignments, shifted.assignments)
        assert base.centers == pytest.approx(shifted.centers)

    def test_wraparound_cluster(self):
        # angles straddling 0/180 must cluster together under the circular
        # metric
        result = classify_polarization([2.0, 178.0, 4.0, 176.0, 90.0, 91.0],
                                       tolerance=8.0)
        d = abs(result.centers[0] - result.centers[1]) % 180.0
        assert min(d, 180.0 - d) == pytest.approx(90.0, abs=8.0)
        assert result.orthogonal

    def test_outlier_flagged(self):
        result = classify_polarization(
            [45.0, 44.0, 46.0, 135.0, 134.0, 136.0, 100.0], tolerance=5.0
        )
        assert 6 in result.outliers

    def test_too_few_angles_rejected(self):
        with pytest.raises(ValidationError):
            classify_polarization([45.0])


class TestSpectrumCsv:
    def test_round_trip_with_temperature(self, tmp_path):
        spec = make_spectrum([ZPL], temperature=18.0)
        path = tmp_path / "spec.csv"
        write_spectrum_csv(spec, path)
        loaded = read_spectrum_csv(path)
        assert loaded.temperature == 18.0
        assert np.allclose(loaded.wavelengths, spec.wavelengths)
        assert np.allclose(loaded.counts, spec.counts)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("wavelength_nm,counts\n581.0\n")
        with pytest.raises(ValidationError):
            read_spectrum_csv(path)
