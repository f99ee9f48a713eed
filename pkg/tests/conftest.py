"""Shared oracles and fixtures.

The ODE oracle integrates the rate equations with an adaptive Runge-Kutta
(scipy), independent of the analytic solutions in spekit.kinetics.
"""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from spekit import ThreeLevelRates


def rate_matrix(rates: ThreeLevelRates) -> np.ndarray:
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    return np.array([[-a, r, d], [a, -(r + s), 0.0], [0.0, s, -d]])


def ode_populations(rates, p0, t_eval, rtol=1e-11, atol=1e-14):
    """Integrate dp/dt = M p with RK45 as an independent oracle."""
    m = rate_matrix(rates)
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    sol = solve_ivp(
        lambda _, p: m @ p, (0.0, float(t_eval[-1]) if t_eval[-1] > 0 else 1.0),
        list(p0), t_eval=t_eval, rtol=rtol, atol=atol, method="RK45",
    )
    assert sol.success
    return sol.y


def ode_g2(rates, taus):
    """g2 oracle: p_e(tau)/p_e(infinity) by numerical integration; the
    stationary value comes from the eigenvector of the 0 eigenvalue."""
    m = rate_matrix(rates)
    w, v = np.linalg.eig(m)
    i0 = np.argmin(np.abs(w))
    stationary = np.real(v[:, i0] / v[:, i0].sum())
    pe = ode_populations(rates, [1.0, 0.0, 0.0], taus)[1]
    return pe / stationary[1]


@pytest.fixture
def e1_rates():
    """Rates whose zero-power limits match the blue emitter: total excited
    decay 1/3.33 ns^-1, deshelving 1/675 ns^-1."""
    total = 1.0 / 3.33
    gamma_em = 0.003
    return ThreeLevelRates(
        gamma_ge=0.03, gamma_eg=total - gamma_em, gamma_em=gamma_em,
        gamma_mg=1.0 / 675.0,
    )
