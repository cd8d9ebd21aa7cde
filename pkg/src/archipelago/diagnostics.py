"""Monte Carlo replication harness and statistical probes.

The probes turn the limit statements about archipelagos into finite-sample
checks: a chi-square interval on the variance of the scaled errors (CLT), the
decay of max-over-islands tail probabilities (exponential deviation) and the
decay of the RMSE against an exact filter (consistency).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .algorithms import run_chain
from .core import weighted_estimate
from .errors import ConfigurationError, DegeneracyError, DomainError
from .feynman_kac import FiniteFK, Lgssm, exact_flow, exact_prediction_flow, kalman_filter

_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite_e.hermegauss(64)


def exact_expectation(model, h, n, prediction=False):
    """Exact ``eta_n h`` for models that have a closed-form flow.

    Finite models use the normalized flow (or the prediction flow); the linear
    Gaussian model integrates ``h`` against the Kalman filter by Gauss-Hermite
    quadrature with 64 nodes.
    """
    if isinstance(model, FiniteFK):
        flow = exact_prediction_flow if prediction else exact_flow
        eta, _ = flow(model, n)
        return float(eta[n] @ np.asarray(h(np.arange(model.d)), dtype=float))
    if isinstance(model, Lgssm) and not prediction:
        mean, var = kalman_filter(model, n)[n]
        x = mean + math.sqrt(var) * _HERMITE_NODES
        vals = np.asarray(h(x), dtype=float)
        return float(_HERMITE_WEIGHTS @ vals / math.sqrt(2.0 * math.pi))
    raise ConfigurationError(f"no exact oracle for {type(model).__name__}")


def _map_seeds(fn, seeds, workers):
    if workers is None or workers <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def _run_seeded(model, config, test_fns, seed):
    try:
        return run_chain(model, config.replace(seed=seed), test_fns)
    except DegeneracyError as exc:
        raise exc.stamped(seed=seed) from None


def replicate_estimates(model, config, h, R, base_seed=None, workers=1):
    """Final-step estimates of ``h`` from ``R`` runs seeded ``base_seed, base_seed+1, ...``.

    The output order follows the seed order whatever the number of workers.
    """
    if R < 0:
        raise DomainError("replicate count must be nonnegative")
    base = config.seed if base_seed is None else base_seed
    seeds = [base + r for r in range(R)]

    def one(seed):
        return weighted_estimate(_run_seeded(model, config, None, seed).archipelago, h)

    return np.asarray(_map_seeds(one, seeds, workers), dtype=float)


@dataclass
class ReplicateReport:
    """Outcome of :func:`clt_check`.

    ``variance`` is the sample variance (``R - 1`` degrees of freedom) of
    ``sqrt(N) (estimate - eta_h)``; ``ci_low``/``ci_high`` bound the true
    variance at the requested level.
    """

    replicates: int
    estimates: np.ndarray
    mean: float
    variance: float
    ci_low: float
    ci_high: float
    target_variance: float
    ks_statistic: Optional[float]
    ks_pvalue: Optional[float]
    passed: bool

    def summary(self):
        return {
            "replicates": self.replicates,
            "mean": self.mean,
            "scaled_error_variance": self.variance,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "target_variance": self.target_variance,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "passed": self.passed,
        }


def clt_check(estimates, target_variance, N, eta_h, level=0.95):
    """Compare the spread of ``sqrt(N)``-scaled errors with an asymptotic variance.

    Passes iff ``target_variance`` lies in the two-sided chi-square confidence
    interval (``R - 1`` degrees of freedom) for the variance of the scaled
    errors. A Kolmogorov-Smirnov statistic against ``N(0, target_variance)`` is
    reported but does not gate. With ``target_variance == 0`` the check passes
    iff the estimates have zero spread.
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim != 1 or est.size == 0:
        raise DomainError("clt_check needs at least one estimate")
    R = est.size
    if R < 2:
        raise DomainError("clt_check needs at least two estimates")
    if target_variance < 0:
        raise DomainError("target variance must be nonnegative")
    z = math.sqrt(N) * (est - eta_h)
    s2 = float(np.var(z, ddof=1))
    dof = R - 1
    alpha = 1.0 - level
    ci_low = dof * s2 / stats.chi2.ppf(1.0 - alpha / 2.0, dof)
    ci_high = dof * s2 / stats.chi2.ppf(alpha / 2.0, dof)
    if target_variance == 0:
        passed = s2 == 0.0
        ks_stat = ks_p = None
    else:
        passed = ci_low <= target_variance <= ci_high
        ks = stats.kstest(z, "norm", args=(0.0, math.sqrt(target_variance)))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    return ReplicateReport(
        R, est, float(est.mean()), s2, float(ci_low), float(ci_high),
        float(target_variance), ks_stat, ks_p, bool(passed),
    )


@dataclass
class DeviationReport:
    m2_grid: list
    tail_probabilities: np.ndarray
    standard_errors: np.ndarray
    log_tail_probabilities: np.ndarray
    slope: float

    def nonincreasing(self, n_se=2.0):
        """Tail probabilities never rise by more than ``n_se`` binomial standard errors."""
        p, se = self.tail_probabilities, self.standard_errors
        for k in range(1, len(p)):
            tol = n_se * math.hypot(se[k], se[k - 1])
            if p[k] > p[k - 1] + tol:
                return False
        return True


def _fit_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = np.isfinite(y)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(x[keep], y[keep], 1)[0])


def deviation_probe(model, config, h, m2_grid, epsilon, R, eta_h=None, workers=1):
    """Empirical ``P(max_i |island estimate_i - eta h| >= epsilon)`` for each ``m2``.

    Island estimates are the per-island self-normalized estimates of the final
    archipelago of ``config`` with ``m2`` replaced by each grid value. The
    returned slope is that of the log tail probability against ``m2``.
    """
    grid = [int(m) for m in m2_grid]
    if not grid:
        raise DomainError("m2 grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("m2 grid must be increasing")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if eta_h is None:
        eta_h = exact_expectation(model, h, config.steps,
                                  config.mode == "fully_adapted_prediction")
    probs, ses = [], []
    for m2 in grid:
        cfg = config.replace(m2=m2)

        def one(seed, cfg=cfg):
            arch = _run_seeded(model, cfg, None, seed).archipelago
            return float(np.max(np.abs(arch.island_estimates(h) - eta_h)))

        dev = np.asarray(_map_seeds(one, [config.seed + r for r in range(R)], workers))
        p = float(np.mean(dev >= epsilon))
        probs.append(p)
        ses.append(math.sqrt(p * (1.0 - p) / R))
    probs = np.asarray(probs)
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    return DeviationReport(grid, probs, np.asarray(ses), logs, _fit_slope(grid, logs))


@dataclass
class AccuracyReport:
    n_grid: list
    rmse: np.ndarray
    standard_errors: np.ndarray
    exact: float
    slope: float


def _split(N):
    m1 = 2 ** int(round(math.log2(N) / 2)) if N & (N - 1) == 0 else int(math.isqrt(N))
    while N % m1:
        m1 -= 1
    return m1, N // m1


def accuracy_probe(model, config, h, n_grid, R, workers=1):
    """RMSE of the final estimate against the exact filter for each total size ``N``.

    Each ``N`` is split as ``m1 = m2 = sqrt(N)`` (closest divisor pair). The
    slope of ``log RMSE`` against ``log N`` is reported; ``-1/2`` is expected.
    """
    grid = [int(n) for n in n_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("n grid must be nonempty and increasing")
    exact = exact_expectation(model, h, config.steps,
                              config.mode == "fully_adapted_prediction")
    rmse, ses = [], []
    for N in grid:
        m1, m2 = _split(N)
        est = replicate_estimates(model, config.replace(m1=m1, m2=m2), h, R, workers=workers)
        sq = (est - exact) ** 2
        r = math.sqrt(sq.mean())
        rmse.append(r)
        # delta method on the mean of squared errors
        ses.append(float(sq.std(ddof=1) / math.sqrt(R) / (2 * r)) if r > 0 and R > 1 else 0.0)
    rmse = np.asarray(rmse)
    with np.errstate(divide="ignore"):
        logs = np.log(rmse)
    return AccuracyReport(grid, rmse, np.asarray(ses), exact, _fit_slope(np.log(grid), logs))
