"""Three-level rate-equation kinetics for a single photon emitter.

The emitter has ground |g>, excited |e>, and metastable (shelving) |m>
states coupled by four incoherent rates (all in 1/ns):

    gamma_ge : pump-dependent excitation        |g> -> |e>
    gamma_eg : radiative decay                  |e> -> |g>
    gamma_em : shelving into the metastable     |e> -> |m>
    gamma_mg : metastable deshelving            |m> -> |g>

Population dynamics follow dp/dt = M p with the rate matrix

        [ -gamma_ge          gamma_eg              gamma_mg ]
    M = [  gamma_ge         -gamma_eg - gamma_em   0        ]
        [  0                 gamma_em             -gamma_mg ]

The second-order correlation is computed as the conditional excited-state
population, g2(tau) = p_e(tau) / p_e(inf) with p_g(0) = 1.  Because p_e has
exactly two decaying eigenmodes and p_e(0) = 0, the correlation is exactly

    g2(tau) = 1 - (1 + alpha) exp(-tau/tau1) + alpha exp(-tau/tau2)

whenever the two nonzero eigenvalues of M are real and distinct;
g2_params_from_rates returns that closed-form parameterization and g2_exact
evaluates the analytic eigen-solution directly (with a confluent fallback
for degenerate eigenvalues).

Units are fixed throughout: rates in 1/ns, times in ns, optical power in mW.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import AbsorbingStateError, DegenerateEigenvaluesError, ValidationError

__all__ = [
    "ThreeLevelRates",
    "LevelPopulations",
    "PumpModel",
    "G2Params",
    "RateSeries",
    "LinearExtrapolation",
    "steady_state",
    "propagate",
    "g2_exact",
    "g2_params_from_rates",
    "nonzero_eigenvalue_magnitudes",
    "pump_rate",
    "with_excitation",
    "extrapolate_zero_power",
    "quantum_efficiency",
]

# Relative eigenvalue splitting below which the confluent (repeated-root)
# solution is used; the distinct-root form loses precision to cancellation
# well before this point matters.
_DEGENERATE_RTOL = 1e-9


@dataclass(frozen=True)
class ThreeLevelRates:
    """Transition rates of the 3-level system, all in 1/ns.

    gamma_ge may be zero for steady-state / dark queries only; operations
    that need active pumping reject it explicitly.
    """

    gamma_ge: float
    gamma_eg: float
    gamma_em: float
    gamma_mg: float

    def __post_init__(self):
        for name in ("gamma_ge", "gamma_eg", "gamma_em", "gamma_mg"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        if self.gamma_eg <= 0:
            raise ValidationError("gamma_eg (radiative decay) must be > 0")

    def matrix(self) -> np.ndarray:
        """3x3 rate matrix M with dp/dt = M p (columns sum to zero)."""
        a, r, s, d = self.gamma_ge, self.gamma_eg, self.gamma_em, self.gamma_mg
        return np.array(
            [[-a, r, d], [a, -(r + s), 0.0], [0.0, s, -d]], dtype=float
        )


@dataclass(frozen=True)
class LevelPopulations:
    """Occupation probabilities of |g>, |e>, |m|; sum to 1 within 1e-12."""

    p_g: float
    p_e: float
    p_m: float

    def __post_init__(self):
        for name, v in (("p_g", self.p_g), ("p_e", self.p_e), ("p_m", self.p_m)):
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValidationError(f"{name} out of [0, 1]: {v}")
        if abs(self.p_g + self.p_e + self.p_m - 1.0) > 1e-12:
            raise ValidationError(
                "populations must sum to 1, got %r" % (self.p_g + self.p_e + self.p_m)
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.p_g, self.p_e, self.p_m])


@dataclass(frozen=True)
class PumpModel:
    """Linear pump: excitation rate = cross_section * power.

    cross_section is in 1/(ns*mW).
    """

    cross_section: float

    def __post_init__(self):
        if not self.cross_section > 0:
            raise ValidationError("cross_section must be > 0")


@dataclass(frozen=True)
class G2Params:
    """Two-exponential g2 parameters: antibunching time tau1 (ns), bunching
    time tau2 (ns) with tau2 > tau1, and bunching amplitude alpha >= 0.

    sigma_* carry fit standard deviations; zero for exact parameters.
    """

    tau1: float
    tau2: float
    alpha_bunching: float
    sigma_tau1: float = 0.0
    sigma_tau2: float = 0.0
    sigma_alpha: float = 0.0

    def __post_init__(self):
        if not self.tau1 > 0:
            raise ValidationError(f"tau1 must be > 0, got {self.tau1}")
        if not self.tau2 > self.tau1:
            raise ValidationError(
                f"tau2 must exceed tau1, got tau1={self.tau1}, tau2={self.tau2}"
            )
        if self.alpha_bunching < 0:
            raise ValidationError(f"alpha_bunching must be >= 0, got {self.alpha_bunching}")

    def curve(self, tau):
        """Evaluate the two-exponential g2 model at |tau| (ns)."""
        t = np.abs(np.asarray(tau, dtype=float))
        a = self.alpha_bunching
        tail = a * np.exp(-t / self.tau2) if np.isfinite(self.tau2) else 0.0
        return 1.0 - (1.0 + a) * np.exp(-t / self.tau1) + tail


@dataclass(frozen=True)
class RateSeries:
    """Power-dependent rate measurements: (power mW, value 1/ns, sigma 1/ns)."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(p), float(v), float(s)) for p, v, s in self.points)
        object.__setattr__(self, "points", pts)
        powers = [p for p, _, _ in pts]
        if len(pts) < 2:
            raise ValidationError("RateSeries needs at least 2 points")
        if any(p <= 0 for p in powers):
            raise ValidationError("powers must be strictly positive")
        if len(set(powers)) != len(powers):
            raise ValidationError("powers must be distinct")

    def arrays(self):
        a = np.array(self.points, dtype=float)
        return a[:, 0], a[:, 1], a[:, 2]


@dataclass(frozen=True)
class LinearExtrapolation:
    """Weighted linear fit value = intercept + slope * power."""

    intercept: float
    slope: float
    sigma_intercept: float
    sigma_slope: float


def _check_pumped(rates: ThreeLevelRates, what: str):
    if rates.gamma_ge <= 0:
        raise ValidationError(f"{what} requires gamma_ge > 0 (active pumping)")


def _check_not_absorbing(rates: ThreeLevelRates):
    if rates.gamma_em > 0 and rates.gamma_mg == 0:
        raise AbsorbingStateError(
            "metastable state is absorbing (gamma_em > 0 with gamma_mg = 0); "
            "all population traps in |m>"
        )


def steady_state(rates: ThreeLevelRates) -> LevelPopulations:
    """Stationary populations, the normalized null vector of the rate matrix.

    With gamma_ge = 0 the emitter relaxes to the ground state.  Raises
    AbsorbingStateError when gamma_em > 0 and gamma_mg = 0 (population would
    trap in |m> with no unique stationary distribution reachable from |g>).
    """
    _check_not_absorbing(rates)
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    if a == 0:
        return LevelPopulations(1.0, 0.0, 0.0)
    if s == 0:
        p_e = a / (a + r)
        return LevelPopulations(1.0 - p_e, p_e, 0.0)
    p_e = 1.0 / (1.0 + (r + s) / a + s / d)
    p_g = p_e * (r + s) / a
    p_m = p_e * s / d
    # remove last-bit rounding so the sum-to-one invariant holds exactly
    total = p_g + p_e + p_m
    return LevelPopulations(p_g / total, p_e / total, p_m / total)


def propagate(rates: ThreeLevelRates, initial: LevelPopulations, tau: float) -> LevelPopulations:
    """Evolve populations by tau ns under the rate matrix."""
    if tau < 0:
        raise ValidationError("tau must be >= 0")
    p = expm(rates.matrix() * tau) @ initial.as_array()
    p = np.clip(p, 0.0, 1.0)
    p /= p.sum()
    return LevelPopulations(*p)


def _nonzero_eigenvalues(rates: ThreeLevelRates):
    """Roots of the quadratic factor of det(M - x I) = -x (x^2 + b x + c).

    Returns (b, c, disc) with the two nonzero eigenvalues being
    (-b +- sqrt(disc)) / 2.
    """
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    b = a + r + s + d
    c = d * (a + r + s) + a * s
    return b, c, b * b - 4.0 * c


def nonzero_eigenvalue_magnitudes(rates: ThreeLevelRates):
    """Magnitudes (1/ns) of the two nonzero rate-matrix eigenvalues,
    (fast, slow).  Requires real eigenvalues."""
    b, c, disc = _nonzero_eigenvalues(rates)
    if disc < 0:
        raise DegenerateEigenvaluesError(
            "complex eigenvalue pair; no real decay-rate decomposition"
        )
    mu_fast = 0.5 * (b + math.sqrt(disc))
    mu_slow = c / mu_fast if mu_fast > 0 else 0.0
    return mu_fast, mu_slow


def g2_exact(rates: ThreeLevelRates, tau_grid) -> np.ndarray:
    """Exact g2(tau) = p_e(tau)/p_e(inf) with p_g(0) = 1, on a tau grid (ns).

    Uses the analytic eigen-solution of the 3x3 rate matrix; degenerate or
    near-degenerate eigenvalue pairs fall back to the confluent closed form.
    Complex eigenvalue pairs are handled in complex arithmetic (the result
    is real).  g2(0) = 0 exactly and g2 -> 1 as tau -> inf.
    """
    _check_pumped(rates, "g2_exact")
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1:
        raise ValidationError("tau_grid must be one-dimensional")
    if tau.size and (np.any(tau < 0) or np.any(np.diff(tau) < 0)):
        raise ValidationError("tau_grid must be nonnegative and sorted")
    pe_inf = steady_state(rates).p_e
    a = rates.gamma_ge
    b, c, disc = _nonzero_eigenvalues(rates)

    if abs(disc) <= (_DEGENERATE_RTOL * b) ** 2:
        lam = -0.5 * b
        g2 = 1.0 + (-pe_inf + (a + lam * pe_inf) * tau) * np.exp(lam * tau) / pe_inf
        return g2

    sq = np.sqrt(complex(disc))
    lam1 = 0.5 * (-b - sq)  # fast mode
    lam2 = 0.5 * (-b + sq)  # slow mode
    c1 = (a + lam2 * pe_inf) / (lam1 - lam2)
    c2 = -pe_inf - c1
    g2 = 1.0 + (c1 * np.exp(lam1 * tau) + c2 * np.exp(lam2 * tau)).real / pe_inf
    out = np.asarray(g2, dtype=float)
    if tau.size and tau[0] == 0.0:
        out[0] = 0.0  # exact by construction; pin against rounding
    return out


def g2_params_from_rates(rates: ThreeLevelRates) -> G2Params:
    """Closed-form (tau1, tau2, alpha) of the two-exponential g2 model.

    1/tau1 and 1/tau2 are the magnitudes of the fast and slow nonzero
    eigenvalues of the rate matrix, and

        alpha = mu1 (mu2 - gamma_mg) / (gamma_mg (mu1 - mu2))

    which makes the two-exponential form agree with g2_exact to machine
    precision.  With gamma_em = 0 the metastable mode carries no amplitude:
    alpha = 0 and tau2 is the deshelving time (infinite when gamma_mg = 0).

    Raises DegenerateEigenvaluesError for repeated or complex eigenvalues,
    and ValidationError outside the shelving regime (deshelving faster than
    the antibunching recovery), where alpha would be negative.
    """
    _check_pumped(rates, "g2_params_from_rates")
    _check_not_absorbing(rates)
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    b, c, disc = _nonzero_eigenvalues(rates)
    if disc < 0 or abs(disc) <= (_DEGENERATE_RTOL * b) ** 2:
        raise DegenerateEigenvaluesError(
            "rate-matrix eigenvalues are degenerate or complex; "
            "the (tau1, tau2, alpha) form does not apply -- use g2_exact"
        )
    if s == 0:
        mu1 = a + r
        mu2 = d
        if mu2 >= mu1:
            raise ValidationError(
                "gamma_mg exceeds the antibunching rate; not a shelving regime"
            )
        return G2Params(tau1=1.0 / mu1, tau2=1.0 / mu2 if mu2 > 0 else math.inf,
                        alpha_bunching=0.0)
    mu1, mu2 = nonzero_eigenvalue_magnitudes(rates)
    alpha = mu1 * (mu2 - d) / (d * (mu1 - mu2))
    if alpha < 0:
        raise ValidationError(
            "deshelving faster than the fast eigenmode (alpha < 0); "
            "not a shelving regime -- use g2_exact"
        )
    return G2Params(tau1=1.0 / mu1, tau2=1.0 / mu2, alpha_bunching=alpha)


def pump_rate(power: float, pump: PumpModel) -> float:
    """Excitation rate gamma_ge (1/ns) at a given optical power (mW)."""
    if power < 0:
        raise ValidationError("power must be >= 0")
    return pump.cross_section * power


def with_excitation(rates: ThreeLevelRates, gamma_ge: float) -> ThreeLevelRates:
    """Copy of rates with the excitation rate replaced."""
    return replace(rates, gamma_ge=gamma_ge)


def extrapolate_zero_power(series: RateSeries) -> LinearExtrapolation:
    """Sigma-weighted linear least squares of rate vs power.

    The intercept is the zero-power decay rate (1/ns); parameter sigmas come
    from the covariance matrix (X' W X)^-1.  When all sigmas are equal the
    fit reduces to the unweighted solution and sigmas are scaled by the
    residual variance (standard errors of an ordinary least-squares line).
    """
    powers, values, sigmas = series.arrays()
    if np.any(sigmas < 0) or (np.any(sigmas == 0) and not np.all(sigmas == 0)):
        raise ValidationError("sigmas must be positive (or all zero for unweighted)")
    unweighted = np.all(sigmas == 0) or np.all(sigmas == sigmas[0])
    w = np.ones_like(values) if unweighted else 1.0 / sigmas**2

    x = np.column_stack([np.ones_like(powers), powers])
    xtw = x.T * w
    normal = xtw @ x
    try:
        cov = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("degenerate power series (singular normal matrix)") from exc
    beta = cov @ (xtw @ values)
    if unweighted:
        resid = values - x @ beta
        dof = max(len(values) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    return LinearExtrapolation(
        intercept=float(beta[0]),
        slope=float(beta[1]),
        sigma_intercept=float(np.sqrt(cov[0, 0])),
        sigma_slope=float(np.sqrt(cov[1, 1])),
    )


def quantum_efficiency(rates: ThreeLevelRates) -> float:
    """Fraction of ground-state returns that are radiative at steady state.

    Flux balance makes the deshelving return flux equal the shelving flux
    (gamma_mg p_m = gamma_em p_e), so the fraction reduces to
    gamma_eg / (gamma_eg + gamma_em), independent of pump power.
    """
    if rates.gamma_eg + rates.gamma_em <= 0:
        raise ValidationError("quantum efficiency undefined: no decay channels")
    return rates.gamma_eg / (rates.gamma_eg + rates.gamma_em)
