"""Command-line surface and pipeline orchestration.

Commands mirror the characterization measurements: `simulate`, `g2`,
`lifetime`, `saturation`, `polarization`, `spectrum`, `linewidth`, and
`reproduce-fig2` (power-dependent g2 series with zero-power extrapolation).
Reports are JSON; plot data (histograms, fit curves on dense grids) are CSV
with units in the column headers.  Given a seed, every output file is
byte-identical across runs.

Exit codes (stable across runs):

    0  success
    2  command-line usage error (argparse)
    3  file/format error (missing files, bad time-tag data)
    4  invalid values (config or data invariants)
    5  fit/analysis failure
    6  unexpected internal error

Config file (JSON; units: rates 1/ns, durations ns, window/bin_width ps,
cross_section 1/(ns*mW), power mW):

    {
      "rates": {"gamma_ge": 0.03, "gamma_eg": 0.2973, "gamma_em": 0.003,
                "gamma_mg": 0.0014815},
      "pump": {"cross_section": 0.1},
      "detector": {"efficiency": 1.0, "dead_time": 0.0, "dark_rate": 0.0,
                   "jitter_sigma": 0.0, "background_rate": 0.0},
      "sim": {"duration": 2e6, "seed": 1234,
              "pulsed": {"period": 25.0, "pulse_width": 1.0}},   // or null
      "correlation": {"bin_width": 256, "window": 200000, "mode": "full"},
      "powers_mw": [0.1, 0.2, 0.3, 0.4, 0.5],
      "hbt": true
    }

The default worker count for per-power parallelism comes from the
SPEKIT_THREADS environment variable (overridden by --threads).
"""

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import correlate, fitters, kinetics, simulate, spectra, tagio
from .errors import (
    FitError,
    NoAntibunchingError,
    PipelineError,
    SpekitError,
    TagFileError,
    ValidationError,
)

__all__ = ["RunConfig", "run_pipeline", "main"]

THREADS_ENV = "SPEKIT_THREADS"

_EXIT_CODES = (
    (TagFileError, 3),
    (FitError, 5),
    (ValidationError, 4),
    (OSError, 3),
)


@dataclass(frozen=True)
class RunConfig:
    """Structured pipeline configuration; see the module docstring for the
    JSON layout and units."""

    rates: kinetics.ThreeLevelRates
    pump: kinetics.PumpModel | None = None
    detector: simulate.DetectorModel | None = None
    sim: simulate.SimConfig = simulate.SimConfig(duration=1e6, seed=0)
    correlation: correlate.CorrelationConfig = correlate.CorrelationConfig(
        window=100_000, bin_width=256
    )
    powers_mw: tuple = ()
    hbt: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            rates = kinetics.ThreeLevelRates(**raw["rates"])
        except KeyError:
            raise ValidationError("config must define 'rates'") from None
        pump = kinetics.PumpModel(**raw["pump"]) if raw.get("pump") else None
        detector = (
            simulate.DetectorModel(**raw["detector"]) if raw.get("detector") else None
        )
        sim_raw = dict(raw.get("sim", {"duration": 1e6}))
        if sim_raw.get("pulsed"):
            sim_raw["pulsed"] = simulate.PulsedExcitation(**sim_raw["pulsed"])
        else:
            sim_raw.pop("pulsed", None)
        sim = simulate.SimConfig(**sim_raw)
        corr = correlate.CorrelationConfig(
            **raw.get("correlation", {"window": 100_000})
        )
        return cls(
            rates=rates, pump=pump, detector=detector, sim=sim, correlation=corr,
            powers_mw=tuple(raw.get("powers_mw", ())), hbt=bool(raw.get("hbt", True)),
        )

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {"rates": asdict(self.rates), "hbt": self.hbt}
        if self.pump:
            out["pump"] = asdict(self.pump)
        if self.detector:
            out["detector"] = asdict(self.detector)
        sim = asdict(self.sim)
        out["sim"] = sim
        out["correlation"] = asdict(self.correlation)
        if self.powers_mw:
            out["powers_mw"] = list(self.powers_mw)
        return out


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SpekitError as exc:
        raise PipelineError(name, exc) from exc


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_xy_csv(path, header, columns):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in zip(*columns):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _fit_payload(result: fitters.FitResult) -> dict:
    payload = result.to_json_dict()
    payload["residual_norm"] = float(result.residual_norm)
    payload["model"] = result.model
    if result.message:
        payload["message"] = result.message
    return payload


def _rates_at_power(cfg: RunConfig, power: float) -> kinetics.ThreeLevelRates:
    if power is None:
        return cfg.rates
    if cfg.pump is None:
        raise ValidationError("--power-mw requires a 'pump' section in the config")
    return kinetics.with_excitation(
        cfg.rates, kinetics.pump_rate(power, cfg.pump)
    )


def _read_three_column_csv(path, expected_header):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if any(c.isalpha() for c in line.split(",")[0]):
                continue  # header row
            parts = line.split(",")
            if len(parts) < 2:
                raise ValidationError(
                    f"{path}: expected `{expected_header}` columns (line {lineno})"
                )
            sigma = float(parts[2]) if len(parts) > 2 else 0.0
            rows.append((float(parts[0]), float(parts[1]), sigma))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg: RunConfig, out_dir, args) -> dict:
    rates = _rates_at_power(cfg, args.power_mw)
    stream = _stage("simulate", simulate.simulate_photon_stream, rates, cfg.sim)
    duration = cfg.sim.duration
    if cfg.detector is not None:
        stream = _stage(
            "detector", simulate.apply_detector, stream, cfg.detector,
            cfg.sim.seed, duration,
        )
    if cfg.hbt and cfg.sim.pulsed is None:
        ch0, ch1 = _stage("split_hbt", simulate.split_hbt, stream, cfg.sim.seed)
        channels = {0: ch0, 1: ch1}
    else:
        channels = {0: stream}
    tag_path = os.path.join(out_dir, "photons.ptag")
    _stage("write_timetags", tagio.write_timetags, tag_path, channels)
    report = {
        "command": "simulate",
        "seed": cfg.sim.seed,
        "duration_ns": duration,
        "counts_per_channel": {str(ch): int(ts.size) for ch, ts in channels.items()},
        "tag_file": os.path.basename(tag_path),
    }
    _write_json(os.path.join(out_dir, "simulate_report.json"), report)
    return report


def _correlation_config(cfg: RunConfig, args) -> correlate.CorrelationConfig:
    corr = cfg.correlation
    if getattr(args, "window_ps", None):
        corr = replace(corr, window=args.window_ps)
    if getattr(args, "bin_width_ps", None):
        corr = replace(corr, bin_width=args.bin_width_ps)
    return corr


def _cmd_g2(cfg: RunConfig, out_dir, args) -> dict:
    tags = _stage("read_timetags", tagio.read_timetags, args.tags)
    if 0 not in tags.channels or 1 not in tags.channels:
        raise PipelineError(
            "read_timetags", ValidationError("g2 needs channels 0 and 1")
        )
    corr = _correlation_config(cfg, args)
    hist = _stage(
        "g2_histogram", correlate.g2_histogram,
        tags.stream(0), tags.stream(1), corr,
    )
    correlate.write_histogram_csv(hist, os.path.join(out_dir, "g2_histogram.csv"))
    normalized = hist.normalized
    mid = hist.counts.size // 2
    report = {
        "command": "g2",
        "bin_width_ps": corr.bin_width,
        "window_ps": corr.window,
        "mode": corr.mode,
        "n_bins": int(hist.counts.size),
        "total_pairs": int(hist.counts.sum()),
        "normalization": float(hist.norm),
        "normalization_sigma": float(hist.norm_sigma),
        "g2_zero_bin": float(normalized[mid]),
        "mean_normalized": float(normalized.mean()),
    }
    try:
        fit = _stage("fit_g2", fitters.fit_g2, hist)
        report["fit"] = _fit_payload(fit)
        tau_ns = np.linspace(0.0, hist.bin_edges[-1] / simulate.PS_PER_NS, 512)
        _write_xy_csv(
            os.path.join(out_dir, "g2_fit_curve.csv"),
            "tau_ns,g2_fit", (tau_ns, fit.curve(tau_ns)),
        )
    except PipelineError as exc:
        if not isinstance(exc.cause, NoAntibunchingError):
            raise
        report["fit"] = None
        report["note"] = str(exc.cause)
    _write_json(os.path.join(out_dir, "g2_report.json"), report)
    return report


def _cmd_lifetime(cfg: RunConfig, out_dir, args) -> dict:
    tags = _stage("read_timetags", tagio.read_timetags, args.tags)
    stream = tags.stream(sorted(tags.channels)[0])
    if cfg.sim.pulsed is None:
        raise PipelineError(
            "lifetime", ValidationError("config must define sim.pulsed for lifetime")
        )
    bin_width = args.bin_width_ps or cfg.correlation.bin_width
    hist = _stage(
        "decay_histogram", correlate.decay_histogram,
        stream, cfg.sim.pulsed.period, bin_width,
    )
    correlate.write_histogram_csv(hist, os.path.join(out_dir, "decay_histogram.csv"))
    fit = _stage("fit_lifetime", fitters.fit_lifetime, hist)
    report = {
        "command": "lifetime",
        "pulse_period_ns": cfg.sim.pulsed.period,
        "bin_width_ps": bin_width,
        "total_counts": int(hist.counts.sum()),
        "fit": _fit_payload(fit),
        "lifetime_ns": fit.params["tau"],
        "lifetime_sigma_ns": fit.sigmas["tau"],
    }
    if fit.converged:
        t_ns = np.linspace(0.0, cfg.sim.pulsed.period, 512)
        _write_xy_csv(
            os.path.join(out_dir, "lifetime_fit_curve.csv"),
            "time_ns,counts_fit", (t_ns, fit.curve(t_ns)),
        )
    _write_json(os.path.join(out_dir, "lifetime_report.json"), report)
    return report


def _cmd_saturation(cfg: RunConfig, out_dir, args) -> dict:
    points = _read_three_column_csv(args.data, "power_mw,rate_cps,sigma_cps")
    fit = _stage("fit_saturation", fitters.fit_saturation, points)
    report = {"command": "saturation", "n_points": len(points), "fit": _fit_payload(fit)}
    if fit.converged:
        model = fitters.saturation_model_from_fit(fit)
        report["R_INF_cps"] = model.R_INF
        report["P_SAT_mW"] = model.P_SAT
        report["rate_at_P_SAT_cps"] = float(
            model.rate(model.P_SAT) - model.alpha_slope * model.P_SAT - model.beta_dark
        )
        powers = np.array([p for p, _, _ in points])
        grid = np.linspace(powers.min() / 2.0, powers.max() * 1.2, 512)
        _write_xy_csv(
            os.path.join(out_dir, "saturation_fit_curve.csv"),
            "power_mw,rate_cps_fit", (grid, fit.curve(grid)),
        )
    _write_json(os.path.join(out_dir, "saturation_report.json"), report)
    return report


def _cmd_polarization(cfg: RunConfig, out_dir, args) -> dict:
    points = _read_three_column_csv(args.data, "theta_deg,rate_cps,sigma_cps")
    fit = _stage("fit_polarization", fitters.fit_polarization, points)
    pol = fitters.polarization_fit_from_result(fit)
    report = {
        "command": "polarization",
        "n_points": len(points),
        "fit": _fit_payload(fit),
        "phi_deg": pol.phi,
        "visibility": pol.visibility,
        "unidentifiable": pol.unidentifiable,
    }
    grid = np.linspace(0.0, 360.0, 721)
    _write_xy_csv(
        os.path.join(out_dir, "polarization_fit_curve.csv"),
        "theta_deg,rate_cps_fit", (grid, fit.curve(grid)),
    )
    _write_json(os.path.join(out_dir, "polarization_report.json"), report)
    return report


def _cmd_spectrum(cfg: RunConfig, out_dir, args) -> dict:
    spec = _stage("read_spectrum", spectra.read_spectrum_csv, args.data)
    shapes = args.shapes.split(",") if "," in args.shapes else args.shapes
    windows = () if args.no_exclusion else spectra.DEFAULT_EXCLUSION_WINDOWS
    peaks = _stage(
        "fit_peaks", spectra.fit_peaks, spec, args.n_peaks, shapes, windows
    )
    report = {
        "command": "spectrum",
        "temperature_K": spec.temperature,
        "peaks": [asdict(p) for p in peaks],
    }
    if len(peaks) >= 2:
        decomp = _stage("debye_waller", spectra.debye_waller, peaks[0], peaks[1:])
        report["dwf"] = decomp.dwf
        report["I_ZPL"] = decomp.I_ZPL
        report["I_PSB"] = decomp.I_PSB
    total = np.zeros_like(spec.wavelengths)
    for p in peaks:
        total = total + p.curve(spec.wavelengths)
    _write_xy_csv(
        os.path.join(out_dir, "spectrum_fit_curve.csv"),
        "wavelength_nm,counts_fit", (spec.wavelengths, total),
    )
    _write_json(os.path.join(out_dir, "spectrum_report.json"), report)
    return report


def _cmd_linewidth(cfg: RunConfig, out_dir, args) -> dict:
    points = _read_three_column_csv(args.data, "temperature_K,fwhm_nm,sigma_nm")
    series = fitters.LinewidthSeries(points=tuple(points))
    fit = _stage("fit_linewidth_t3", fitters.fit_linewidth_t3, series)
    report = {
        "command": "linewidth",
        "n_points": len(points),
        "fit": _fit_payload(fit),
        "gamma0_nm": fit.params["gamma0"],
        "cubic_coeff_nm_per_K3": fit.params["cubic_coeff"],
    }
    temps = np.array([t for t, _, _ in points])
    grid = np.linspace(temps.min(), temps.max(), 512)
    _write_xy_csv(
        os.path.join(out_dir, "linewidth_fit_curve.csv"),
        "temperature_K,fwhm_nm_fit", (grid, fit.curve(grid)),
    )
    _write_json(os.path.join(out_dir, "linewidth_report.json"), report)
    return report


def _fig2_window_ps(rates: kinetics.ThreeLevelRates, cap_ps: int) -> int:
    params = kinetics.g2_params_from_rates(rates)
    tau2 = params.tau2 if math.isfinite(params.tau2) else 100.0 * params.tau1
    return min(int(math.ceil(10.0 * tau2 * simulate.PS_PER_NS)), cap_ps)


def _fig2_one_power(cfg: RunConfig, index: int, power: float, bin_width: int):
    seed = int(
        np.random.SeedSequence([cfg.sim.seed, 0xF162, index]).generate_state(
            1, np.uint64
        )[0]
    )
    rates = _rates_at_power(cfg, power)
    sim_cfg = replace(cfg.sim, seed=seed, pulsed=None)
    stream = _stage("simulate", simulate.simulate_photon_stream, rates, sim_cfg)
    ch0, ch1 = _stage("split_hbt", simulate.split_hbt, stream, seed)
    window = _fig2_window_ps(
        rates, int(cfg.sim.duration * simulate.PS_PER_NS / 4)
    )
    corr = correlate.CorrelationConfig(window=window, bin_width=bin_width)
    hist = _stage("g2_histogram", correlate.g2_histogram, ch0, ch1, corr)
    fit = _stage("fit_g2", fitters.fit_g2, hist)
    mid = hist.counts.size // 2
    return {
        "power_mw": power,
        "seed": seed,
        "emitted_photons": int(stream.size),
        "window_ps": window,
        "g2_zero_bin": float(hist.normalized[mid]),
        "fit": _fit_payload(fit),
    }, hist


def _cmd_reproduce_fig2(cfg: RunConfig, out_dir, args) -> dict:
    if cfg.pump is None or not cfg.powers_mw:
        raise PipelineError(
            "config", ValidationError("reproduce-fig2 needs 'pump' and 'powers_mw'")
        )
    bin_width = args.bin_width_ps or cfg.correlation.bin_width
    powers = list(cfg.powers_mw)
    jobs = list(enumerate(powers))
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            outcomes = list(
                pool.map(lambda ij: _fig2_one_power(cfg, ij[0], ij[1], bin_width), jobs)
            )
    else:
        outcomes = [_fig2_one_power(cfg, i, p, bin_width) for i, p in jobs]

    per_power = []
    inv_tau1 = []
    inv_tau2 = []
    for (entry, hist), power in zip(outcomes, powers):
        per_power.append(entry)
        idx = len(per_power) - 1
        correlate.write_histogram_csv(
            hist, os.path.join(out_dir, f"g2_histogram_power{idx}.csv")
        )
        p = entry["fit"]["params"]
        s = entry["fit"]["sigmas"]
        inv_tau1.append(
            (power, 1.0 / p["tau1"], s["tau1"] / p["tau1"] ** 2)
        )
        inv_tau2.append(
            (power, 1.0 / p["tau2"], s["tau2"] / p["tau2"] ** 2)
        )
    fit1 = _stage(
        "extrapolate_zero_power", kinetics.extrapolate_zero_power,
        kinetics.RateSeries(tuple(inv_tau1)),
    )
    fit2 = _stage(
        "extrapolate_zero_power", kinetics.extrapolate_zero_power,
        kinetics.RateSeries(tuple(inv_tau2)),
    )
    low_powers = [e for e in per_power if e["power_mw"] <= 1.0]
    report = {
        "command": "reproduce-fig2",
        "seed": cfg.sim.seed,
        "powers_mw": powers,
        "per_power": per_power,
        "inv_tau1_extrapolation": asdict(fit1),
        "inv_tau2_extrapolation": asdict(fit2),
        "excited_lifetime_ns": 1.0 / fit1.intercept,
        "metastable_lifetime_ns": 1.0 / fit2.intercept,
        "g2_zero_below_half_up_to_1mW": bool(
            all(e["g2_zero_bin"] < 0.5 for e in low_powers)
        ),
    }
    _write_xy_csv(
        os.path.join(out_dir, "inv_tau1_vs_power.csv"),
        "power_mw,inv_tau1_per_ns,sigma_per_ns",
        tuple(np.array(inv_tau1).T),
    )
    _write_xy_csv(
        os.path.join(out_dir, "inv_tau2_vs_power.csv"),
        "power_mw,inv_tau2_per_ns,sigma_per_ns",
        tuple(np.array(inv_tau2).T),
    )
    _write_json(os.path.join(out_dir, "fig2_report.json"), report)
    return report


_COMMANDS = {
    "simulate": _cmd_simulate,
    "g2": _cmd_g2,
    "lifetime": _cmd_lifetime,
    "saturation": _cmd_saturation,
    "polarization": _cmd_polarization,
    "spectrum": _cmd_spectrum,
    "linewidth": _cmd_linewidth,
    "reproduce-fig2": _cmd_reproduce_fig2,
}


def run_pipeline(command: str, cfg: RunConfig, out_dir, args=None) -> dict:
    """Run one pipeline command, writing reports into out_dir.

    args carries the per-command overrides (an argparse namespace or any
    object with the attributes used by the command); returns the report
    dict that was written as JSON.
    """
    if command not in _COMMANDS:
        raise ValidationError(f"unknown command {command!r}")
    os.makedirs(out_dir, exist_ok=True)
    if args is None:
        args = argparse.Namespace(
            tags=None, data=None, power_mw=None, bin_width_ps=None,
            window_ps=None, threads=1, n_peaks=2, shapes="lorentzian",
            no_exclusion=False,
        )
    return _COMMANDS[command](cfg, out_dir, args)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spekit",
        description="Single-photon-emitter photophysics pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override sim seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument(
            "--threads", type=int,
            default=int(os.environ.get(THREADS_ENV, "1")),
            help=f"worker threads (default ${THREADS_ENV} or 1)",
        )

    p = sub.add_parser("simulate", help="simulate a photon stream to a PTAG file")
    common(p)
    p.add_argument("--power-mw", type=float, default=None)

    p = sub.add_parser("g2", help="correlation histogram + g2 fit from time tags")
    common(p)
    p.add_argument("--tags", required=True, help="PTAG or CSV time-tag file")
    p.add_argument("--bin-width-ps", type=int, default=None)
    p.add_argument("--window-ps", type=int, default=None)

    p = sub.add_parser("lifetime", help="pulsed decay histogram + lifetime fit")
    common(p)
    p.add_argument("--tags", required=True)
    p.add_argument("--bin-width-ps", type=int, default=None)

    p = sub.add_parser("saturation", help="fit saturation curve to power/rate CSV")
    common(p, needs_config=False)
    p.add_argument("--data", required=True, help="CSV: power_mw,rate_cps,sigma_cps")

    p = sub.add_parser("polarization", help="fit sin^2 polarization scan CSV")
    common(p, needs_config=False)
    p.add_argument("--data", required=True, help="CSV: theta_deg,rate_cps,sigma_cps")

    p = sub.add_parser("spectrum", help="fit spectral peaks and Debye-Waller factor")
    common(p, needs_config=False)
    p.add_argument("--data", required=True, help="CSV: wavelength_nm,counts")
    p.add_argument("--n-peaks", type=int, default=2)
    p.add_argument("--shapes", default="lorentzian",
                   help="peak shape or comma list per peak")
    p.add_argument("--no-exclusion", action="store_true",
                   help="keep the Raman exclusion windows in the fit")

    p = sub.add_parser("linewidth", help="fit T^3 linewidth broadening CSV")
    common(p, needs_config=False)
    p.add_argument("--data", required=True, help="CSV: temperature_K,fwhm_nm,sigma_nm")

    p = sub.add_parser("reproduce-fig2",
                       help="power series of g2 fits with zero-power extrapolation")
    common(p)
    p.add_argument("--bin-width-ps", type=int, default=None)
    return parser


def _default_config() -> RunConfig:
    return RunConfig(
        rates=kinetics.ThreeLevelRates(
            gamma_ge=0.03, gamma_eg=0.2973, gamma_em=0.003, gamma_mg=1.0 / 675.0
        ),
        pump=kinetics.PumpModel(cross_section=0.1),
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if getattr(args, "config", None):
            cfg = RunConfig.from_json(args.config)
        else:
            cfg = _default_config()
        if args.seed is not None:
            cfg = replace(cfg, sim=replace(cfg.sim, seed=args.seed))
        report = run_pipeline(args.command, cfg, args.out, args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES:
            if isinstance(exc.cause, klass):
                return code
        return 6
    except tuple(k for k, _ in _EXIT_CODES) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                return code
        return 6
    except SpekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
