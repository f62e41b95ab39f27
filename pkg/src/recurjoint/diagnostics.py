"""Posterior summarization, convergence diagnostics, model comparison and
replicate-study aggregation."""

from __future__ import annotations

import numpy as np

__all__ = [
    "summarize_draws",
    "posterior_summary",
    "gelman_rubin_psrf",
    "cpo_lpml",
    "replicate_aggregate",
]


def summarize_draws(draws: np.ndarray) -> dict:
    """Mean, sd and type-7 empirical 2.5/50/97.5% quantiles of one series."""
    x = np.asarray(draws, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty trace")
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return {
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "q2.5": float(q[0]),
        "q50": float(q[1]),
        "q97.5": float(q[2]),
    }


def posterior_summary(trace, parameter: str) -> dict:
    """Summary of one named parameter from a chain trace (or any object with
    a ``column`` accessor)."""
    return summarize_draws(trace.column(parameter))


def gelman_rubin_psrf(chains) -> float:
    """Classic potential scale reduction factor over >= 2 equal-length
    scalar chains: ``sqrt(((n-1)/n * W + B/n) / W)``.

    Returns 1.0 by convention when every chain is constant.
    """
    series = [np.asarray(c, dtype=float) for c in chains]
    if len(series) < 2:
        raise ValueError("at least two chains are required")
    n = series[0].size
    if n < 2 or any(c.size != n for c in series):
        raise ValueError("chains must share a common length of at least 2")
    stacked = np.stack(series)
    within = float(stacked.var(axis=1, ddof=1).mean())
    means = stacked.mean(axis=1)
    between_over_n = float(means.var(ddof=1))  # B / n
    if within == 0.0:
        return 1.0
    pooled = (n - 1) / n * within + between_over_n
    return float(np.sqrt(pooled / within))


def cpo_lpml(log_likelihoods: np.ndarray) -> tuple:
    """Harmonic-mean conditional predictive ordinates and their summed log.

    ``log_likelihoods`` is draws x participants.  Computed in log space:
    ``log CPO_i = log S - logsumexp(-l_si)``.
    """
    ll = np.asarray(log_likelihoods, dtype=float)
    if ll.ndim != 2:
        raise ValueError("expected a draws-by-participants matrix")
    bad = ~np.isfinite(ll)
    if bad.any():
        s, i = np.argwhere(bad)[0]
        raise ValueError(f"non-finite log likelihood at draw {s}, participant {i}")
    neg = -ll
    top = neg.max(axis=0)
    lse = top + np.log(np.exp(neg - top).sum(axis=0))
    log_cpo = np.log(ll.shape[0]) - lse
    return log_cpo, float(log_cpo.sum())


def replicate_aggregate(replicates, truth: dict) -> dict:
    """Average posterior means, percentage bias and 95% interval coverage
    across replicates of one study cell.

    ``replicates`` maps parameter name to a list of per-replicate summaries
    (each with mean/q2.5/q97.5).  Parameters with zero truth report absolute
    bias and are flagged.
    """
    report = {}
    for name, summaries in replicates.items():
        if name not in truth or not summaries:
            continue
        true_value = float(truth[name])
        means = np.array([s["mean"] for s in summaries])
        lo = np.array([s["q2.5"] for s in summaries])
        hi = np.array([s["q97.5"] for s in summaries])
        avg = float(means.mean())
        covered = float(((lo <= true_value) & (true_value <= hi)).mean())
        entry = {
            "truth": true_value,
            "avg_mean": avg,
            "coverage_pct": 100.0 * covered,
            "replicates": int(means.size),
        }
        if true_value == 0.0:
            entry["bias_absolute"] = avg
            entry["bias_flag"] = "truth is zero; absolute bias reported"
        else:
            entry["bias_pct"] = 100.0 * (avg - true_value) / true_value
        report[name] = entry
    return report
