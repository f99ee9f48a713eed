"""spekit: single-photon-emitter photophysics toolkit.

Simulates 3-level emitters as kinetic Monte Carlo photon streams, builds
correlation and decay histograms, and fits the standard characterization
models (g2, lifetime, saturation, polarization, spectral peaks and
Debye-Waller factor, T^3 linewidth broadening) with covariance-based
uncertainties.
"""

from .errors import (
    AbsorbingStateError,
    DegenerateEigenvaluesError,
    FitError,
    NoAntibunchingError,
    PeakOverlapError,
    PipelineError,
    SingularJacobianError,
    SpekitError,
    TagFileError,
    ValidationError,
)
from .kinetics import (
    G2Params,
    LevelPopulations,
    LinearExtrapolation,
    PumpModel,
    RateSeries,
    ThreeLevelRates,
    extrapolate_zero_power,
    g2_exact,
    g2_params_from_rates,
    nonzero_eigenvalue_magnitudes,
    propagate,
    pump_rate,
    quantum_efficiency,
    steady_state,
    with_excitation,
)
from .simulate import (
    PS_PER_NS,
    DetectorModel,
    PhotonRecord,
    PulsedExcitation,
    SimConfig,
    apply_detector,
    simulate_photon_stream,
    simulate_photon_stream_segmented,
    split_hbt,
)
from .correlate import (
    CorrelationConfig,
    Histogram,
    decay_histogram,
    g2_histogram,
    write_histogram_csv,
)
from .fitters import (
    MODELS,
    DecayModel,
    FitResult,
    LinewidthSeries,
    Model,
    PolarizationFit,
    SaturationModel,
    decay_model_from_fit,
    fit_curve,
    fit_g2,
    fit_lifetime,
    fit_linewidth_t3,
    fit_polarization,
    fit_saturation,
    g2_params_from_fit,
    monte_carlo_calibration,
    polarization_fit_from_result,
    saturation_model_from_fit,
)
from .spectra import (
    DEFAULT_EXCLUSION_WINDOWS,
    PeakModel,
    PolarizationClusters,
    SpectralDecomposition,
    Spectrum,
    classify_polarization,
    debye_waller,
    fit_peaks,
    read_spectrum_csv,
    write_spectrum_csv,
)
from .tagio import TagFile, merge_channels, read_timetags, write_timetags
from .cli import RunConfig, run_pipeline

__version__ = "0.1.0"
