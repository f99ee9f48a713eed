"""Spectral peak decomposition, Debye-Waller factor, and polarization-state
classification.

Peaks are area-parameterized Lorentzians (default) or Gaussians fitted
simultaneously together with a linear baseline; exclusion windows (e.g. the
second-order Raman bands around 578-592 nm) are removed before fitting.
The Debye-Waller factor is the fraction of emission in the zero phonon
line, I_ZPL / (I_ZPL + sum I_PSB), using analytic peak areas; all fitted
phonon-side-band peaks are integrated over the full line.

Polarization-state classification is a 1-D circular k-means (k = 2) on a
180-degree period, reporting the two cluster centers, per-angle
assignments, outliers beyond a tolerance, and whether the centers are
orthogonal within that tolerance (the two-state hypothesis).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import PeakOverlapError, ValidationError
from .fitters import MODELS, Model, fit_curve

__all__ = [
    "Spectrum",
    "PeakModel",
    "SpectralDecomposition",
    "PolarizationClusters",
    "DEFAULT_EXCLUSION_WINDOWS",
    "fit_peaks",
    "debye_waller",
    "classify_polarization",
    "read_spectrum_csv",
    "write_spectrum_csv",
]

# second-order Raman region of the host crystal, excluded from peak fits
DEFAULT_EXCLUSION_WINDOWS = ((578.0, 592.0),)

_SHAPES = ("lorentzian", "gaussian")


@dataclass(frozen=True)
class Spectrum:
    """Sampled PL spectrum: wavelengths (nm, strictly increasing) and counts."""

    wavelengths: np.ndarray
    counts: np.ndarray
    temperature: float | None = None

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        ct = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "counts", ct)
        if wl.ndim != 1 or wl.shape != ct.shape:
            raise ValidationError("wavelengths and counts must be 1-D, equal length")
        if np.any(np.diff(wl) <= 0):
            raise ValidationError("wavelengths must be strictly increasing")
        if np.any(ct < 0):
            raise ValidationError("counts must be nonnegative")


@dataclass(frozen=True)
class PeakModel:
    """One emission line: shape, center (nm), fwhm (nm), area (counts*nm)."""

    shape: str
    center: float
    fwhm: float
    area: float

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValidationError(f"shape must be one of {_SHAPES}")
        if not self.fwhm > 0:
            raise ValidationError("fwhm must be > 0")
        if not self.area > 0:
            raise ValidationError("area must be > 0")

    def curve(self, wavelengths) -> np.ndarray:
        x = np.asarray(wavelengths, dtype=float)
        return MODELS[self.shape].fn(x, np.array([self.center, self.fwhm, self.area]))


@dataclass(frozen=True)
class SpectralDecomposition:
    """ZPL + phonon-side-band peaks with integrated intensities and the
    Debye-Waller factor dwf = I_ZPL / I_TOT."""

    zpl: PeakModel
    psb: tuple
    I_ZPL: float
    I_PSB: float
    I_TOT: float
    dwf: float

    def __post_init__(self):
        if abs(self.I_TOT - (self.I_ZPL + self.I_PSB)) > 1e-9 * max(self.I_TOT, 1.0):
            raise ValidationError("I_TOT must equal I_ZPL + I_PSB")
        if not 0.0 <= self.dwf <= 1.0:
            raise ValidationError("dwf must be in [0, 1]")


def _composite_model(shapes, n_peaks) -> Model:
    names = []
    for i in range(n_peaks):
        names += [f"center_{i}", f"fwhm_{i}", f"area_{i}"]
    names += ["baseline_intercept", "baseline_slope"]
    fns = [MODELS[s].fn for s in shapes]

    def fn(x, p):
        out = p[3 * n_peaks] + p[3 * n_peaks + 1] * x
        for i, peak_fn in enumerate(fns):
            out = out + peak_fn(x, p[3 * i : 3 * i + 3])
        return out

    return Model("multi_peak", tuple(names), fn)


def _seed_peaks(wl, counts, n_peaks):
    """Initial (center, fwhm, area) guesses from the most prominent maxima."""
    base = float(np.percentile(counts, 10))
    idx, props = find_peaks(counts, prominence=0.0)
    if idx.size < n_peaks:
        raise ValidationError(
            f"found only {idx.size} local maxima for {n_peaks} requested peaks"
        )
    order = idx[np.argsort(props["prominences"])[::-1][:n_peaks]]
    seeds = []
    step = float(np.median(np.diff(wl)))
    for i in order:
        height = counts[i] - base
        half = base + 0.5 * (counts[i] - base)
        right = i
        while right + 1 < counts.size and counts[right + 1] > half:
            right += 1
        left = i
        while left - 1 >= 0 and counts[left - 1] > half:
            left -= 1
        fwhm = max(wl[min(right + 1, wl.size - 1)] - wl[max(left - 1, 0)], step)
        seeds.append((float(wl[i]), float(fwhm), float(max(height, 1e-12) * fwhm * 1.5)))
    seeds.sort(key=lambda s: s[0])
    return seeds, base


def fit_peaks(spec: Spectrum, n_peaks: int, shapes="lorentzian",
              exclusion_windows=DEFAULT_EXCLUSION_WINDOWS) -> list[PeakModel]:
    """Simultaneous least-squares fit of n_peaks lines plus a linear baseline.

    shapes is a single shape name or one per peak (assigned to the seeded
    peaks in order of increasing center).  Samples inside any exclusion
    window (nm intervals) are removed before fitting.  Peaks whose initial
    centers are closer than a quarter linewidth raise PeakOverlapError.
    Returns the fitted peaks sorted by center.
    """
    if n_peaks < 1:
        raise ValidationError("n_peaks must be >= 1")
    if isinstance(shapes, str):
        shapes = (shapes,) * n_peaks
    shapes = tuple(shapes)
    if len(shapes) != n_peaks or any(s not in _SHAPES for s in shapes):
        raise ValidationError(f"shapes must be {n_peaks} names from {_SHAPES}")
    mask = np.ones(spec.wavelengths.size, dtype=bool)
    for lo, hi in exclusion_windows or ():
        mask &= ~((spec.wavelengths >= lo) & (spec.wavelengths <= hi))
    wl = spec.wavelengths[mask]
    counts = spec.counts[mask]
    if wl.size < 3 * n_peaks + 2:
        raise ValidationError("not enough samples outside exclusion windows")

    seeds, base = _seed_peaks(wl, counts, n_peaks)
    for (c_a, w_a, _), (c_b, w_b, _) in zip(seeds, seeds[1:]):
        if abs(c_b - c_a) < max(w_a, w_b) / 4.0:
            raise PeakOverlapError(
                f"initial peak centers {c_a:.4g} and {c_b:.4g} nm are closer "
                f"than a quarter linewidth; try fewer peaks"
            )
    model = _composite_model(shapes, n_peaks)
    init = {}
    bounds = {}
    span = wl[-1] - wl[0]
    for i, (c, w, a) in enumerate(seeds):
        init[f"center_{i}"] = c
        init[f"fwhm_{i}"] = w
        init[f"area_{i}"] = a
        bounds[f"center_{i}"] = (wl[0] - span, wl[-1] + span)
        bounds[f"fwhm_{i}"] = (1e-9, 10.0 * span)
        bounds[f"area_{i}"] = (1e-300, np.inf)
    init["baseline_intercept"] = base
    init["baseline_slope"] = 0.0
    result = fit_curve(model, wl, counts, None, init=init, bounds=bounds)
    peaks = [
        PeakModel(
            shape=shapes[i],
            center=result.params[f"center_{i}"],
            fwhm=result.params[f"fwhm_{i}"],
            area=result.params[f"area_{i}"],
        )
        for i in range(n_peaks)
    ]
    peaks.sort(key=lambda p: p.center)
    return peaks


def debye_waller(zpl: PeakModel, psb) -> SpectralDecomposition:
    """Debye-Waller factor from a fitted ZPL and phonon-side-band peaks.

    Intensities are the analytic areas of the fitted lines; requires at
    least one PSB peak (its area may be arbitrarily small)."""
    psb = tuple(psb)
    if not psb:
        raise ValidationError("debye_waller requires at least one PSB peak")
    i_zpl = zpl.area
    i_psb = float(sum(p.area for p in psb))
    i_tot = i_zpl + i_psb
    if i_tot <= 0:
        raise ValidationError("zero total area")
    return SpectralDecomposition(
        zpl=zpl, psb=psb, I_ZPL=i_zpl, I_PSB=i_psb, I_TOT=i_tot, dwf=i_zpl / i_tot
    )


@dataclass(frozen=True)
class PolarizationClusters:
    """Two-state classification of emitter polarization angles (degrees).

    centers are sorted ascending; assignments map each input angle to a
    center index; outliers lists input indices farther than the tolerance
    from both centers; orthogonal records whether the centers are 90 deg
    apart within the tolerance; two_state holds when the centers are
    orthogonal and no angle is an outlier; degenerate marks a collapsed
    single cluster."""

    centers: tuple
    assignments: np.ndarray
    outliers: tuple
    orthogonal: bool
    two_state: bool = False
    degenerate: bool = False


def _circular_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 180.0
    return np.minimum(d, 180.0 - d)


def _circular_mean(angles):
    z = np.exp(2j * np.radians(np.asarray(angles)))
    return math.degrees(0.5 * np.angle(z.mean())) % 180.0


def classify_polarization(phis, tolerance: float = 5.0) -> PolarizationClusters:
    """Two-cluster circular k-means of polarization angles (period 180 deg).

    Angles are wrapped modulo 180 (adding 180 to any input leaves the
    result unchanged).  All-identical angles give a degenerate
    single-cluster result.  The two-state hypothesis holds when the cluster
    centers are orthogonal within the tolerance and no angle lies farther
    than the tolerance from both centers; otherwise a warning is emitted
    (more than two states suspected).
    """
    phi = np.asarray(phis, dtype=float) % 180.0
    if phi.size < 2:
        raise ValidationError("classify_polarization needs at least 2 angles")
    if not tolerance > 0:
        raise ValidationError("tolerance must be > 0")
    pairwise = _circular_distance(phi[:, None], phi[None, :])
    if pairwise.max() == 0.0:
        return PolarizationClusters(
            centers=(float(phi[0]),),
            assignments=np.zeros(phi.size, dtype=int),
            outliers=(),
            orthogonal=False,
            degenerate=True,
        )
    i, j = np.unravel_index(int(np.argmax(pairwise)), pairwise.shape)
    centers = [float(phi[i]), float(phi[j])]
    assign = np.zeros(phi.size, dtype=int)
    for _ in range(100):
        d = _circular_distance(phi[:, None], np.array(centers)[None, :])
        new_assign = np.argmin(d, axis=1)
        new_centers = []
        for k in range(2):
            members = phi[new_assign == k]
            new_centers.append(_circular_mean(members) if members.size else centers[k])
        if np.array_equal(new_assign, assign) and new_centers == centers:
            break
        assign, centers = new_assign, new_centers
    order = np.argsort(centers)
    centers = [centers[k] for k in order]
    remap = np.empty(2, dtype=int)
    remap[order] = np.arange(2)
    assign = remap[assign]
    dist_to_own = _circular_distance(phi, np.array(centers)[assign])
    dist_to_other = _circular_distance(phi, np.array(centers)[1 - assign])
    outliers = tuple(np.nonzero((dist_to_own > tolerance) & (dist_to_other > tolerance))[0])
    separation = float(_circular_distance(centers[0], centers[1]))
    orthogonal = abs(separation - 90.0) <= tolerance
    if not orthogonal:
        warnings.warn(
            f"cluster centers {centers[0]:.1f} and {centers[1]:.1f} deg are "
            f"{separation:.1f} deg apart, not orthogonal within {tolerance} deg; "
            "more than two polarization states suspected"
        )
    return PolarizationClusters(
        centers=(centers[0], centers[1]),
        assignments=assign,
        outliers=outliers,
        orthogonal=orthogonal,
    )


def read_spectrum_csv(path) -> Spectrum:
    """Read `wavelength_nm,counts` rows; an optional `# temperature_K=<val>`
    comment line carries the sample temperature."""
    temperature = None
    wavelengths = []
    counts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("temperature_K"):
                    temperature = float(body.split("=", 1)[1])
                continue
            if line.lower().startswith("wavelength_nm"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValidationError(f"{path}: expected 2 columns on line {lineno}")
            wavelengths.append(float(parts[0]))
            counts.append(float(parts[1]))
    return Spectrum(np.array(wavelengths), np.array(counts), temperature=temperature)


def write_spectrum_csv(spec: Spectrum, path):
    with open(path, "w", encoding="utf-8") as fh:
        if spec.temperature is not None:
            fh.write(f"# temperature_K={spec.temperature!r}\n")
        fh.write("wavelength_nm,counts\n")
        for w, c in zip(spec.wavelengths, spec.counts):
            fh.write(f"{float(w)!r},{float(c)!r}\n")
