"""Independent brute-force evaluators used as oracles.

Everything here is deliberately coded from the printed model formulas with
plain Python floats and no shared helpers from the package, so agreement
with the library is a genuine dual-implementation check.
"""

import math


def baseline_level(t, grid, levels):
    """Hazard level at time t for a left-open/right-closed piecewise grid,
    extending the last level beyond the grid."""
    for g in range(len(levels)):
        if grid[g] < t <= grid[g + 1]:
            return levels[g]
    return levels[-1]


def cumulative_hazard_piecewise(t, grid, levels):
    total = 0.0
    for g in range(len(levels)):
        lo, hi = grid[g], grid[g + 1]
        if t > lo:
            total += levels[g] * (min(t, hi) - lo)
    if t > grid[-1]:
        total += levels[-1] * (t - grid[-1])
    return total


def cumulative_hazard(t, baseline):
    if baseline["variant"] == "powerlaw":
        return t ** baseline["shape"]
    return cumulative_hazard_piecewise(t, baseline["grid"], baseline["levels"])


def hazard_level(t, baseline):
    if baseline["variant"] == "powerlaw":
        psi = baseline["shape"]
        return psi * t ** (psi - 1.0)
    return baseline_level(t, baseline["grid"], baseline["levels"])


def recurrent_intensity(t, gamma, beta, x, mu, baseline):
    lin = sum(b * xv for b, xv in zip(beta, x))
    return gamma * hazard_level(t, baseline) * math.exp(lin + mu)


def recurrent_survival(t, gamma, beta, x, mu, baseline):
    lin = sum(b * xv for b, xv in zip(beta, x))
    return math.exp(-gamma * math.exp(lin + mu) * cumulative_hazard(t, baseline))


def terminal_survival(t, kappa, gamma, alpha0, alpha, z, xi1, xi2, mu):
    lin = alpha0 + sum(a * zv for a, zv in zip(alpha, z)) + xi2 * mu
    return math.exp(-(gamma ** (-kappa * xi1)) * t ** kappa * math.exp(-kappa * lin))


def terminal_hazard(t, kappa, gamma, alpha0, alpha, z, xi1, xi2, mu):
    lin = alpha0 + sum(a * zv for a, zv in zip(alpha, z)) + xi2 * mu
    return (gamma ** (-kappa * xi1)) * t ** (kappa - 1.0) * kappa * math.exp(-kappa * lin)


def terminal_density(t, kappa, gamma, alpha0, alpha, z, xi1, xi2, mu):
    return (terminal_hazard(t, kappa, gamma, alpha0, alpha, z, xi1, xi2, mu)
            * terminal_survival(t, kappa, gamma, alpha0, alpha, z, xi1, xi2, mu))


def participant_likelihood(record, params, mode="corrected"):
    """Observed-data likelihood of one participant from the printed display.

    ``record`` is (followup, delta, times, x, z) and ``params`` holds
    (beta, alpha, alpha0, xi1, xi2, gamma, mu, kappa, d_flag, baseline).
    Returns the likelihood on the natural scale.
    """
    followup, delta, times, x, z = record
    beta = params["beta"]
    kwargs = dict(kappa=params["kappa"], gamma=params["gamma"], alpha0=params["alpha0"],
                  alpha=params["alpha"], z=z, xi1=params["xi1"], xi2=params["xi2"],
                  mu=params["mu"])
    surv_r = recurrent_survival(followup, params["gamma"], beta, x, params["mu"],
                                params["baseline"])
    dens_t = terminal_density(followup, **kwargs)
    surv_t = terminal_survival(followup, **kwargs)
    d_flag = params["d_flag"]

    if len(times) == 0:
        if mode == "literal":
            return (d_flag
                    + (1 - d_flag) * (1 - delta) * surv_r * surv_t
                    + (1 - d_flag) * delta * surv_r * dens_t)
        terminal = dens_t if delta else surv_t
        return terminal * (surv_r if not d_flag else 1.0)
    prod = 1.0
    for t in times:
        prod *= recurrent_intensity(t, params["gamma"], beta, x, params["mu"],
                                    params["baseline"])
    terminal = dens_t if delta else surv_t
    return prod * surv_r * terminal
