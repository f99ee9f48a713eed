"""Deterministic nonlinear least-squares engine and the model library.

The engine (fit_curve) is a damped least-squares (Levenberg-Marquardt)
minimizer over named parameters with box bounds and a numeric central-
difference Jacobian.  It is fully deterministic: identical inputs produce
bit-identical results, and the cost is monotone nonincreasing over accepted
steps.  Fixed, documented tolerances (reproducible CI):

    GRADIENT_TOL = 1e-10   scaled gradient max-norm,
                           max_j |g_j| * max(|p_j|, 1) <= GRADIENT_TOL * max(1, cost)
    STEP_TOL     = 1e-12   relative step max-norm,
                           max_j |dp_j| / max(|p_j|, 1) <= STEP_TOL
    MAX_ITERATIONS = 500   accepted steps before flagging non-convergence

Parameter sigmas come from the covariance matrix, the inverse of the
weighted normal matrix J'J at the optimum (scaled by the reduced chi-square
when no measurement sigmas are supplied).  Numeric-derivative steps are
scaled by max(|p|, 1), so parameters should be expressed in their natural
units rather than rescaled to tiny magnitudes.

Model functions registered here (x units in parentheses):

    linear            intercept + slope * x
    exponential_decay amplitude * exp(-x / tau) + baseline          (ns)
    g2                1 - (1+alpha) e^(-|x|/tau1) + alpha e^(-|x|/tau2)  (ns)
    saturation        r_eff x / (p_eff + x) + alpha_slope x + beta_dark (mW)
    sin_squared       amplitude sin^2(x + phi) + offset             (deg)
    linewidth_t3      gamma0 + cubic_coeff * x^3                    (K)
    linewidth_t5      gamma0 + quintic_coeff * x^5                  (K)
    lorentzian        area-normalized Lorentzian (center, fwhm, area)
    gaussian          area-normalized Gaussian (center, fwhm, area)

The named fit_* routines add auto-initialization heuristics and domain
checks for each measurement type used in emitter characterization.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .correlate import Histogram
from .errors import (
    FitError,
    NoAntibunchingError,
    SingularJacobianError,
    ValidationError,
)
from .kinetics import G2Params
from .simulate import PS_PER_NS

__all__ = [
    "GRADIENT_TOL",
    "STEP_TOL",
    "MAX_ITERATIONS",
    "Model",
    "MODELS",
    "FitResult",
    "fit_curve",
    "DecayModel",
    "SaturationModel",
    "PolarizationFit",
    "LinewidthSeries",
    "fit_g2",
    "fit_lifetime",
    "fit_saturation",
    "fit_polarization",
    "fit_linewidth_t3",
    "g2_params_from_fit",
    "decay_model_from_fit",
    "saturation_model_from_fit",
    "polarization_fit_from_result",
    "monte_carlo_calibration",
]

GRADIENT_TOL = 1e-10
STEP_TOL = 1e-12
MAX_ITERATIONS = 500

_DIFF_STEP = 6.06e-6  # cbrt(machine eps): central-difference step scale
_LAMBDA0 = 1e-3
_LAMBDA_UP = 10.0
_LAMBDA_DOWN = 3.0
_LAMBDA_MAX = 1e13


@dataclass(frozen=True)
class Model:
    """A named model function f(x, params) with ordered parameter names."""

    name: str
    param_names: tuple
    fn: Callable


def _lorentzian(x, p):
    center, fwhm, area = p
    half = 0.5 * fwhm
    return (area / math.pi) * half / ((x - center) ** 2 + half * half)


def _gaussian(x, p):
    center, fwhm, area = p
    s = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    return area / (s * math.sqrt(2.0 * math.pi)) * np.exp(-0.5 * ((x - center) / s) ** 2)


MODELS = {
    m.name: m
    for m in (
        Model("linear", ("intercept", "slope"), lambda x, p: p[0] + p[1] * x),
        Model(
            "exponential_decay",
            ("tau", "amplitude", "baseline"),
            lambda x, p: p[1] * np.exp(-x / p[0]) + p[2],
        ),
        Model(
            "g2",
            ("tau1", "tau2", "alpha"),
            lambda x, p: 1.0
            - (1.0 + p[2]) * np.exp(-np.abs(x) / p[0])
            + p[2] * np.exp(-np.abs(x) / p[1]),
        ),
        Model(
            "saturation",
            ("r_eff", "p_eff", "alpha_slope", "beta_dark"),
            lambda x, p: p[0] * x / (p[1] + x) + p[2] * x + p[3],
        ),
        Model(
            "sin_squared",
            ("phi", "amplitude", "offset"),
            lambda x, p: p[1] * np.sin(np.radians(x + p[0])) ** 2 + p[2],
        ),
        Model("linewidth_t3", ("gamma0", "cubic_coeff"), lambda x, p: p[0] + p[1] * x**3),
        Model("linewidth_t5", ("gamma0", "quintic_coeff"), lambda x, p: p[0] + p[1] * x**5),
        Model("lorentzian", ("center", "fwhm", "area"), _lorentzian),
        Model("gaussian", ("center", "fwhm", "area"), _gaussian),
    )
}


@dataclass(frozen=True)
class FitResult:
    """Fit outcome: named parameter values and standard deviations from the
    covariance matrix, the weighted residual norm sqrt(sum((r/sigma)^2)),
    the covariance itself (parameter order = params order), a convergence
    flag, and the number of accepted steps."""

    model: str
    params: dict
    sigmas: dict
    residual_norm: float
    covariance: np.ndarray
    converged: bool
    iterations: int
    message: str = ""

    @property
    def param_names(self):
        return tuple(self.params)

    def values(self) -> np.ndarray:
        return np.array([self.params[k] for k in self.params])

    def curve(self, x) -> np.ndarray:
        """Evaluate the fitted model on x."""
        return MODELS[self.model].fn(np.asarray(x, dtype=float), self.values())

    def to_json_dict(self) -> dict:
        """Serializable dict with the fixed keys params, sigmas, covariance,
        converged, iterations (covariance ordered like params)."""
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "sigmas": {k: float(v) for k, v in self.sigmas.items()},
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


def _resolve_model(model) -> Model:
    if isinstance(model, Model):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise ValidationError(
            f"unknown model {model!r}; available: {sorted(MODELS)}"
        ) from None


def _jacobian(fn, x, p, w, lo, hi) -> np.ndarray:
    jac = np.empty((x.size, p.size))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(p.size):
            h = _DIFF_STEP * max(abs(p[j]), 1.0)
            pj_hi = min(p[j] + h, hi[j])
            pj_lo = max(p[j] - h, lo[j])
            if pj_hi <= pj_lo:
                jac[:, j] = 0.0
                continue
            pp = p.copy()
            pp[j] = pj_hi
            f_hi = fn(x, pp)
            pp[j] = pj_lo
            f_lo = fn(x, pp)
            jac[:, j] = w * (np.asarray(f_hi) - np.asarray(f_lo)) / (pj_hi - pj_lo)
    return jac


def fit_curve(model, x, y, sigma=None, *, init, bounds=None,
              max_iterations=MAX_ITERATIONS) -> FitResult:
    """Weighted least-squares fit of a registered model to (x, y, sigma).

    init is a complete {name: value} mapping within bounds; bounds maps
    names to (lo, hi) intervals (missing names are unbounded).  Requires at
    least as many points as parameters and finite data.  Non-convergence
    after the iteration budget returns a result flagged converged=False; a
    parameter with no effect on the model at the initial point raises
    SingularJacobianError naming it.
    """
    mdl = _resolve_model(model)
    names = mdl.param_names
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be 1-D arrays of equal length")
    if x.size < len(names):
        raise ValidationError(
            f"need at least {len(names)} points for model {mdl.name!r}, got {x.size}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("x and y must be finite")
    if sigma is None:
        w = np.ones_like(y)
    else:
        sig = np.asarray(sigma, dtype=float)
        if sig.shape != y.shape or not np.isfinite(sig).all() or np.any(sig <= 0):
            raise ValidationError("sigma must be positive, finite, same length as y")
        w = 1.0 / sig

    missing = [n for n in names if n not in init]
    if missing:
        raise ValidationError(f"init missing parameters: {missing}")
    p = np.array([float(init[n]) for n in names])
    lo = np.full(p.size, -np.inf)
    hi = np.full(p.size, np.inf)
    for j, n in enumerate(names):
        if bounds and n in bounds:
            lo[j], hi[j] = bounds[n]
            if lo[j] >= hi[j]:
                raise ValidationError(f"empty bounds for {n}")
    if np.any(p < lo) or np.any(p > hi):
        raise ValidationError("init must lie within bounds")

    def residuals(params):
        # extreme trial parameters may overflow; the resulting inf cost is
        # rejected by the step-acceptance test
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return w * (y - np.asarray(mdl.fn(x, params), dtype=float))

    r = residuals(p)
    cost = float(r @ r)
    scale = np.maximum(np.abs(p), 1.0)
    lam = _LAMBDA0
    iterations = 0
    converged = False
    message = ""

    for _ in range(max_iterations):
        jac = _jacobian(mdl.fn, x, p, w, lo, hi)
        if iterations == 0:
            dead = [names[j] for j in range(p.size)
                    if not np.any(jac[:, j]) and lo[j] < hi[j]]
            if dead:
                raise SingularJacobianError(dead)
        grad = jac.T @ r
        hess = jac.T @ jac
        scale = np.maximum(np.abs(p), 1.0)
        # parameters pinned at a bound with the gradient pointing outward
        # are held fixed (active set); convergence uses the free gradient
        blocked = ((p <= lo) & (grad < 0)) | ((p >= hi) & (grad > 0))
        free = ~blocked
        free_grad = np.where(free, grad, 0.0)
        if np.max(np.abs(free_grad) * scale) <= GRADIENT_TOL * max(1.0, cost):
            converged = True
            message = "gradient tolerance reached"
            break
        damp = np.diag(hess).copy()
        damp[damp <= 0] = 1.0
        hess_free = hess[np.ix_(free, free)]
        damp_free = np.diag(damp[free])
        grad_free = grad[free]
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step_free = np.linalg.solve(hess_free + lam * damp_free, grad_free)
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_UP
                continue
            step = np.zeros_like(p)
            step[free] = step_free
            trial = np.clip(p + step, lo, hi)
            r_trial = residuals(trial)
            with np.errstate(over="ignore", invalid="ignore"):
                cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial < cost:
                delta = np.max(np.abs(trial - p) / scale)
                p, r, cost = trial, r_trial, cost_trial
                iterations += 1
                lam = max(lam / _LAMBDA_DOWN, 1e-14)
                accepted = True
                if delta <= STEP_TOL:
                    converged = True
                    message = "step tolerance reached"
                break
            lam *= _LAMBDA_UP
        if converged:
            break
        if not accepted:
            converged = True  # no descent direction left: at a (possibly bound) minimum
            message = "damping exhausted (stationary point)"
            break
    else:
        message = f"not converged after {max_iterations} iterations"

    jac = _jacobian(mdl.fn, x, p, w, lo, hi)
    hess = jac.T @ jac
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(hess)
    if sigma is None and x.size > p.size:
        cov = cov * cost / (x.size - p.size)
    cov = 0.5 * (cov + cov.T)
    sig_diag = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(
        model=mdl.name,
        params={n: float(v) for n, v in zip(names, p)},
        sigmas={n: float(s) for n, s in zip(names, sig_diag)},
        residual_norm=float(math.sqrt(cost)),
        covariance=cov,
        converged=converged,
        iterations=iterations,
        message=message,
    )


# ---------------------------------------------------------------------------
# domain result types


@dataclass(frozen=True)
class DecayModel:
    """Single-exponential decay: amplitude * exp(-t/tau) + baseline, tau in ns."""

    tau: float
    amplitude: float
    baseline: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")


@dataclass(frozen=True)
class SaturationModel:
    """Saturation-curve parameters.

    The fit determines the effective products R_eff = eta_COL * R_INF and
    P_eff = eta_EX * P_SAT; the efficiencies are configuration constants
    (they only rescale R_INF and P_SAT and are not separately identifiable
    from power/rate data).
    """

    R_INF: float  # cps
    P_SAT: float  # mW
    eta_EX: float = 1.0
    eta_COL: float = 1.0
    alpha_slope: float = 0.0  # cps/mW
    beta_dark: float = 0.0  # cps

    def __post_init__(self):
        if not self.R_INF > 0 or not self.P_SAT > 0:
            raise ValidationError("R_INF and P_SAT must be > 0")
        for name in ("eta_EX", "eta_COL"):
            if not 0 < getattr(self, name) <= 1:
                raise ValidationError(f"{name} must be in (0, 1]")
        if self.alpha_slope < 0 or self.beta_dark < 0:
            raise ValidationError("alpha_slope and beta_dark must be >= 0")

    def rate(self, power):
        p = np.asarray(power, dtype=float)
        return (
            self.eta_COL * self.R_INF * p / (self.eta_EX * self.P_SAT + p)
            + self.alpha_slope * p
            + self.beta_dark
        )


@dataclass(frozen=True)
class PolarizationFit:
    """Emitter polarization: rate = amplitude sin^2(theta + phi) + offset."""

    phi: float  # degrees, in [0, 180)
    amplitude: float  # cps
    offset: float  # cps
    visibility: float
    unidentifiable: bool = False

    def __post_init__(self):
        if not 0 <= self.phi < 180:
            raise ValidationError("phi must be in [0, 180)")
        if not 0 <= self.visibility <= 1:
            raise ValidationError("visibility must be in [0, 1]")


@dataclass(frozen=True)
class LinewidthSeries:
    """Temperature-dependent ZPL linewidths: (T kelvin, fwhm nm, sigma nm),
    with the fitted fwhm(T) = gamma0 + cubic_coeff * T^3 coefficients."""

    points: tuple
    gamma0: float | None = None
    cubic_coeff: float | None = None

    def __post_init__(self):
        pts = tuple((float(t), float(f), float(s)) for t, f, s in self.points)
        object.__setattr__(self, "points", pts)
        if any(t <= 0 for t, _, _ in pts):
            raise ValidationError("temperatures must be > 0")
        if any(f <= 0 for _, f, _ in pts):
            raise ValidationError("linewidths must be > 0")

    def arrays(self):
        a = np.array(self.points, dtype=float)
        return a[:, 0], a[:, 1], a[:, 2]


# ---------------------------------------------------------------------------
# named fits


def _fold_histogram(hist: Histogram):
    """Fold a tau=0-centered correlation histogram onto |tau| (ns).

    Returns (tau_ns, g, sigma); mirrored bins are summed so their Poisson
    statistics combine."""
    if hist.norm is None:
        raise ValidationError("histogram must be normalized (norm set)")
    counts = hist.counts
    n = counts.size
    if n % 2 != 1:
        raise ValidationError("expected an odd number of bins centered on tau=0")
    mid = n // 2
    bw_ns = (hist.bin_edges[1] - hist.bin_edges[0]) / PS_PER_NS
    folded = counts[mid:].astype(float).copy()
    folded[1:] += counts[:mid][::-1]
    scale = np.full(folded.size, 2.0 * hist.norm)
    scale[0] = hist.norm
    tau = np.arange(folded.size) * bw_ns
    g = folded / scale
    sig = np.sqrt(np.maximum(folded, 1.0)) / scale
    return tau, g, sig


def fit_g2(hist: Histogram, init: dict | None = None) -> FitResult:
    """Fit the two-exponential g2 model to a normalized correlation histogram.

    The symmetric histogram is folded onto |tau|.  Auto-initialization:
    tau1 from the dip half-recovery point, tau2 from the decay of the
    bunching tail, alpha from the peak excess above 1.  Raises
    NoAntibunchingError when the histogram has no dip (minimum bin > 0.8).
    """
    tau, g, sig = _fold_histogram(hist)
    if g.min() > 0.8:
        raise NoAntibunchingError(
            f"no antibunching signature: minimum bin {g.min():.3f} > 0.8"
        )
    if init is None:
        g0 = g[0]
        half = g0 + 0.5 * (1.0 - g0)
        above = np.nonzero(g >= half)[0]
        tau1_0 = tau[above[0]] if above.size and above[0] > 0 else tau[1]
        excess = g - 1.0
        start = np.searchsorted(tau, 5.0 * tau1_0)
        alpha_0 = float(excess[start:].max(initial=0.0))
        if alpha_0 > 0.02:
            peak = start + int(np.argmax(excess[start:]))
            below = np.nonzero(excess[peak:] < alpha_0 / math.e)[0]
            tau2_0 = tau[peak + below[0]] - tau[peak] if below.size else tau[-1] / 5.0
            tau2_0 = max(tau2_0, 2.0 * tau1_0)
        else:
            alpha_0 = 0.02
            tau2_0 = max(10.0 * tau1_0, tau[-1] / 5.0)
        init = {"tau1": tau1_0, "tau2": tau2_0, "alpha": alpha_0}
    return fit_curve(
        "g2", tau, g, sig, init=init,
        bounds={"tau1": (1e-9, np.inf), "tau2": (1e-9, np.inf), "alpha": (0.0, np.inf)},
    )


def g2_params_from_fit(result: FitResult) -> G2Params:
    """G2Params (with fit sigmas) from a fit_g2 result."""
    p, s = result.params, result.sigmas
    if p["tau2"] <= p["tau1"]:
        raise FitError(
            "fitted tau2 <= tau1; histogram does not support a separated "
            "bunching time scale"
        )
    return G2Params(
        tau1=p["tau1"], tau2=p["tau2"], alpha_bunching=p["alpha"],
        sigma_tau1=s["tau1"], sigma_tau2=s["tau2"], sigma_alpha=s["alpha"],
    )


def fit_lifetime(hist: Histogram) -> FitResult:
    """Fit a single-exponential decay to a pulse-folded decay histogram.

    The baseline is initialized from the pre-pulse bins (cyclically, the
    tail of the folded period); the decay is fitted from the peak bin
    onward with x measured from the peak.  Data without a decaying
    signature (at least 10 bins above baseline) return converged=False.
    """
    t_ns = hist.centers / PS_PER_NS
    counts = hist.counts.astype(float)
    n_tail = max(counts.size // 10, 2)
    baseline0 = float(counts[-n_tail:].mean())
    peak = int(np.argmax(counts))
    amp0 = counts[peak] - baseline0
    above = counts > baseline0 + 3.0 * math.sqrt(baseline0 + 1.0)
    if amp0 <= 0 or above.sum() < 10:
        zeros = np.zeros((3, 3))
        return FitResult(
            model="exponential_decay",
            params={"tau": float("nan"), "amplitude": 0.0, "baseline": baseline0},
            sigmas={"tau": float("inf"), "amplitude": 0.0, "baseline": 0.0},
            residual_norm=float(np.sqrt(np.sum((counts - counts.mean()) ** 2))),
            covariance=zeros, converged=False, iterations=0,
            message="no decay signature above the baseline",
        )
    x = t_ns[peak:] - t_ns[peak]
    y = counts[peak:]
    sig = np.sqrt(np.maximum(y, 1.0))
    drop = np.nonzero(y - baseline0 < amp0 / math.e)[0]
    tau0 = x[drop[0]] if drop.size and drop[0] > 0 else x[-1] / 5.0
    result = fit_curve(
        "exponential_decay", x, y, sig,
        init={"tau": tau0, "amplitude": amp0, "baseline": max(baseline0, 0.0)},
        bounds={"tau": (1e-9, np.inf), "amplitude": (0.0, np.inf),
                "baseline": (0.0, np.inf)},
    )
    return result


def decay_model_from_fit(result: FitResult) -> DecayModel:
    p = result.params
    return DecayModel(tau=p["tau"], amplitude=p["amplitude"], baseline=p["baseline"])


def fit_saturation(points, eta_ex: float = 1.0, eta_col: float = 1.0) -> FitResult:
    """Fit the 3-level saturation curve to (power mW, rate cps, sigma cps).

    Fits the effective parameters r_eff = eta_COL * R_INF and
    p_eff = eta_EX * P_SAT plus the linear background slope and dark-count
    offset.  Needs at least 5 powers spanning below and above the
    saturation knee; when all points lie in the linear regime
    (max power < 0.2 * fitted p_eff) the result is flagged converged=False
    with a diagnosis.
    """
    pts = np.array([(float(p), float(r), float(s)) for p, r, s in points])
    if pts.shape[0] < 5:
        raise ValidationError("fit_saturation needs at least 5 powers")
    power, rate, sig = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(power <= 0):
        raise ValidationError("powers must be > 0")
    sigma = sig if np.all(sig > 0) else None
    order = np.argsort(power)
    r_max = float(rate.max())
    half = 0.5 * r_max
    above = order[np.nonzero(rate[order] >= half)[0]]
    p_eff0 = float(power[above[0]]) if above.size else float(np.median(power))
    init = {
        "r_eff": 1.2 * r_max,
        "p_eff": p_eff0,
        "alpha_slope": 0.0,
        "beta_dark": 0.0,
    }
    result = fit_curve(
        "saturation", power, rate, sigma, init=init,
        bounds={
            "r_eff": (0.0, np.inf),
            "p_eff": (1e-12, np.inf),
            "alpha_slope": (0.0, np.inf),
            "beta_dark": (0.0, np.inf),
        },
    )
    if power.max() < 0.2 * result.params["p_eff"]:
        result = FitResult(
            model=result.model, params=result.params, sigmas=result.sigmas,
            residual_norm=result.residual_norm, covariance=result.covariance,
            converged=False, iterations=result.iterations,
            message="all points in the linear regime: max power "
                    f"{power.max():g} mW < 0.2 * fitted p_eff "
                    f"{result.params['p_eff']:g} mW; saturation parameters "
                    "are not identifiable",
        )
    return result


def saturation_model_from_fit(result: FitResult, eta_ex: float = 1.0,
                              eta_col: float = 1.0) -> SaturationModel:
    p = result.params
    return SaturationModel(
        R_INF=p["r_eff"] / eta_col, P_SAT=p["p_eff"] / eta_ex,
        eta_EX=eta_ex, eta_COL=eta_col,
        alpha_slope=p["alpha_slope"], beta_dark=p["beta_dark"],
    )


def fit_polarization(points) -> FitResult:
    """Fit rate = amplitude sin^2(theta + phi) + offset to polar-scan data.

    Needs at least 6 angles covering >= 180 degrees.  The initial values
    come from the exact linear decomposition in (1, cos 2theta, sin 2theta);
    the reported phi is wrapped into [0, 180).  Constant data return a
    result flagged unidentifiable (zero visibility) without fitting.
    """
    pts = np.array([(float(t), float(r), float(s)) for t, r, s in points])
    if pts.shape[0] < 6:
        raise ValidationError("fit_polarization needs at least 6 angles")
    theta, rate, sig = pts[:, 0], pts[:, 1], pts[:, 2]
    if theta.max() - theta.min() < 180.0 - 1e-9:
        raise ValidationError("angles must cover at least 180 degrees")
    sigma = sig if np.all(sig > 0) else None
    span = rate.max() - rate.min()
    if span <= 1e-12 * max(abs(rate.max()), 1.0):
        return FitResult(
            model="sin_squared",
            params={"phi": 0.0, "amplitude": 0.0, "offset": float(rate.mean())},
            sigmas={"phi": float("inf"), "amplitude": 0.0, "offset": 0.0},
            residual_norm=0.0, covariance=np.zeros((3, 3)),
            converged=True, iterations=0,
            message="constant data: phi unidentifiable, visibility 0",
        )
    two_t = np.radians(2.0 * theta)
    design = np.column_stack([np.ones_like(two_t), np.cos(two_t), np.sin(two_t)])
    c0, c1, c2 = np.linalg.lstsq(design, rate, rcond=None)[0]
    amp0 = 2.0 * math.hypot(c1, c2)
    phi0 = math.degrees(0.5 * math.atan2(c2, -c1)) % 180.0
    off0 = max(c0 - 0.5 * amp0, 0.0)
    result = fit_curve(
        "sin_squared", theta, rate, sigma,
        init={"phi": phi0, "amplitude": amp0, "offset": off0},
        bounds={"amplitude": (0.0, np.inf), "offset": (0.0, np.inf)},
    )
    wrapped = dict(result.params)
    wrapped["phi"] = wrapped["phi"] % 180.0
    return FitResult(
        model=result.model, params=wrapped, sigmas=result.sigmas,
        residual_norm=result.residual_norm, covariance=result.covariance,
        converged=result.converged, iterations=result.iterations,
        message=result.message,
    )


def polarization_fit_from_result(result: FitResult) -> PolarizationFit:
    p = result.params
    amp, off = p["amplitude"], p["offset"]
    denominator = amp + 2.0 * off
    visibility = amp / denominator if denominator > 0 else 0.0
    return PolarizationFit(
        phi=p["phi"] % 180.0, amplitude=amp, offset=off,
        visibility=min(max(visibility, 0.0), 1.0),
        unidentifiable="unidentifiable" in result.message,
    )


def fit_linewidth_t3(series: LinewidthSeries) -> FitResult:
    """Fit fwhm(T) = gamma0 + cubic_coeff * T^3 to a linewidth series.

    gamma0 >= 0 is enforced by bound.  A best fit wanting a negative cubic
    coefficient (narrowing with temperature) is flagged converged=False.
    """
    temp, fwhm, sig = series.arrays()
    if temp.size < 3:
        raise ValidationError("fit_linewidth_t3 needs at least 3 temperatures")
    sigma = sig if np.all(sig > 0) else None
    design = np.column_stack([np.ones_like(temp), temp**3])
    g0, c0 = np.linalg.lstsq(design, fwhm, rcond=None)[0]
    result = fit_curve(
        "linewidth_t3", temp, fwhm, sigma,
        init={"gamma0": max(g0, 0.0), "cubic_coeff": c0},
        bounds={"gamma0": (0.0, np.inf)},
    )
    if result.params["cubic_coeff"] < 0:
        result = FitResult(
            model=result.model, params=result.params, sigmas=result.sigmas,
            residual_norm=result.residual_norm, covariance=result.covariance,
            converged=False, iterations=result.iterations,
            message="fitted cubic coefficient is negative: linewidth does "
                    "not broaden with temperature",
        )
    return result


def monte_carlo_calibration(model, x, params_true: dict, noise_sigma: float,
                            n_trials: int, seed: int, *, bounds=None,
                            max_workers: int | None = None):
    """Coverage and sigma calibration of fit_curve on synthetic noisy data.

    Generates n_trials noisy realizations y_true + N(0, noise_sigma), fits
    each (initialized at truth), and returns a dict with per-parameter
    2-sigma coverage fractions, the ratio of the covariance sigma to the
    empirical spread of the estimates, and the raw estimates.
    """
    mdl = _resolve_model(model)
    x = np.asarray(x, dtype=float)
    truth = np.array([params_true[n] for n in mdl.param_names])
    y_true = np.asarray(mdl.fn(x, truth), dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(n_trials)
    sig = np.full(x.size, noise_sigma)

    def one(i):
        y = y_true + np.random.default_rng(seeds[i]).normal(0.0, noise_sigma, x.size)
        res = fit_curve(mdl, x, y, sig, init=dict(params_true), bounds=bounds)
        return res.values(), np.array([res.sigmas[n] for n in mdl.param_names])

    if max_workers is not None and max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(one, range(n_trials)))
    else:
        outcomes = [one(i) for i in range(n_trials)]
    estimates = np.array([v for v, _ in outcomes])
    sigmas = np.array([s for _, s in outcomes])
    within = np.abs(estimates - truth) <= 2.0 * sigmas
    coverage = {n: float(within[:, j].mean()) for j, n in enumerate(mdl.param_names)}
    spread = estimates.std(axis=0, ddof=1)
    ratio = {
        n: float(sigmas[:, j].mean() / spread[j]) if spread[j] > 0 else float("inf")
        for j, n in enumerate(mdl.param_names)
    }
    return {"coverage": coverage, "sigma_ratio": ratio, "estimates": estimates}
