"""
Synthetic households with a known treatment effect, and a Monte Carlo harness.

Covariates come from a Gaussian copula whose marginals reproduce the survey's
descriptive moments; treatment follows a logistic selection model on the
distances to Potosi and to the boundary.
"""

import logging
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats
from scipy.special import expit

from mitadml.core.batch import TaskBatch
from mitadml.core.design import build_design
from mitadml.core.dml import estimate_effect
from mitadml.core.exceptions import CalibrationFailure, ConfigError, McUnstable
from mitadml.core.ols import cell_result
from mitadml.core.seeds import derive_seed, rng_for
from mitadml.models.config import DEFAULT_SEED
from mitadml.models.dataset import ROLES, Dataset
from mitadml.models.simulation import (
    DgpConfig,
    EffectMode,
    EstimatorKind,
    EstimatorSpec,
    GForm,
    GroundTruth,
    McReport,
)

logger = logging.getLogger("mitadml")

# Marginal targets: (mean, sd).
MOMENTS: Dict[str, Tuple[float, float]] = {
    "longitude": (-0.334883, 1.203266),
    "latitude": (-0.053991, 0.820277),
    "dist_potosi": (8.963985, 1.449563),
    "dist_boundary": (40.639062, 28.62655),
    "elevation": (3.840895, 0.378298),
    "slope": (7.129698, 4.1237),
    "n_infants": (0.50203, 0.730186),
    "n_children": (1.217862, 1.321108),
    "n_adults": (2.536536, 1.255328),
    "log_consumption": (5.877284, 1.010021),
}
COUNT_FLOORS = {"n_infants": 0, "n_children": 0, "n_adults": 1}
SEGMENT_SHARES = (0.085927, 0.288904, 0.384303)

# Copula dimensions; the last one drives the boundary segment.
COPULA_DIMS = [
    "longitude",
    "latitude",
    "dist_potosi",
    "dist_boundary",
    "elevation",
    "slope",
    "n_infants",
    "n_children",
    "n_adults",
    "segment",
]

POPULATION_DRAWS = 1_000_000
BOUNDARY_WEIGHT = 0.5
BISECTION_BRACKET = (-20.0, 20.0)
COUNT_SUPPORT = 40
MAX_FAILURE_SHARE = 0.05


def correlation_matrix(cfg: DgpConfig) -> np.ndarray:
    """Copula correlation: independent dimensions except Potosi and boundary distances."""
    corr = np.eye(len(COPULA_DIMS))
    i, j = COPULA_DIMS.index("dist_potosi"), COPULA_DIMS.index("dist_boundary")
    corr[i, j] = corr[j, i] = cfg.potosi_boundary_corr
    return corr


def _latent_normals(n: int, cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    lower = linalg.cholesky(correlation_matrix(cfg), lower=True)
    return rng.standard_normal((n, len(COPULA_DIMS))) @ lower.T


def _gamma_ppf(u: np.ndarray, mean: float, sd: float) -> np.ndarray:
    shape = (mean / sd) ** 2
    return stats.gamma.ppf(u, shape, scale=sd**2 / mean)


@lru_cache(maxsize=16)
def count_distribution(mean: float, sd: float, floor: int) -> np.ndarray:
    """
    Probabilities of floor, floor+1, ... for a rounded normal truncated below at floor.

    The latent location and scale are solved so the count matches the target
    mean and standard deviation.
    """
    support = np.arange(floor, floor + COUNT_SUPPORT)

    def probabilities(params: np.ndarray) -> np.ndarray:
        mu, sigma = params
        upper = stats.norm.cdf((support + 0.5 - mu) / sigma)
        lower = stats.norm.cdf((support - 0.5 - mu) / sigma)
        mass = upper - lower
        return mass / mass.sum()

    def residuals(params: np.ndarray) -> np.ndarray:
        p = probabilities(params)
        m = p @ support
        s = np.sqrt(p @ (support - m) ** 2)
        return np.array([m - mean, s - sd])

    solution = optimize.least_squares(
        residuals, x0=[mean, sd], bounds=([-10.0, 0.05], [20.0, 10.0]), xtol=1e-12, ftol=1e-12
    )
    return probabilities(solution.x)


def _count_ppf(u: np.ndarray, role: str) -> np.ndarray:
    mean, sd = MOMENTS[role]
    floor = COUNT_FLOORS[role]
    cdf = np.cumsum(count_distribution(mean, sd, floor))
    index = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return (floor + index).astype(np.float64)


def _standardized(values: np.ndarray, role: str) -> np.ndarray:
    mean, sd = MOMENTS[role]
    return (values - mean) / sd


def _selection_index(dist_potosi: np.ndarray, dist_boundary: np.ndarray) -> np.ndarray:
    """Households nearer to Potosi and to the boundary are more likely treated."""
    return -_standardized(dist_potosi, "dist_potosi") - BOUNDARY_WEIGHT * _standardized(
        dist_boundary, "dist_boundary"
    )


def treatment_effect(cfg: DgpConfig, dist_potosi: np.ndarray) -> np.ndarray:
    """Per-household effect under the configured effect mode."""
    z_pot = _standardized(dist_potosi, "dist_potosi")
    if cfg.effect_mode is EffectMode.LINEAR:
        return cfg.true_theta + cfg.effect_slope * z_pot
    if cfg.effect_mode is EffectMode.STEP:
        return cfg.true_theta * (z_pot < 0)
    return np.full(len(z_pot), cfg.true_theta)


def _baseline_outcome(cfg: DgpConfig, cov: Dict[str, np.ndarray]) -> np.ndarray:
    z_pot = _standardized(cov["dist_potosi"], "dist_potosi")
    z_bnd = _standardized(cov["dist_boundary"], "dist_boundary")
    g = (
        -0.15 * z_pot
        + 0.10 * z_bnd
        + 0.12 * _standardized(cov["elevation"], "elevation")
        - 0.05 * _standardized(cov["slope"], "slope")
        - 0.05 * (cov["n_infants"] - MOMENTS["n_infants"][0])
        - 0.08 * (cov["n_children"] - MOMENTS["n_children"][0])
        + 0.10 * (cov["n_adults"] - MOMENTS["n_adults"][0])
        + 0.05 * cov["seg1"]
        - 0.03 * cov["seg2"]
    )
    if cfg.g_form is GForm.NONLINEAR:
        g = g + 0.25 * np.sin(2.0 * z_bnd) + 0.10 * (z_pot**2 - 1.0)
    elif cfg.g_form is GForm.STEP:
        g = g + 0.30 * (z_bnd > 0)
    return g


def _draw_covariates(n: int, cfg: DgpConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    latent = _latent_normals(n, cfg, rng)
    u = stats.norm.cdf(latent)
    col = {name: k for k, name in enumerate(COPULA_DIMS)}

    cov: Dict[str, np.ndarray] = {}
    for role in ("longitude", "latitude", "dist_potosi", "elevation"):
        mean, sd = MOMENTS[role]
        cov[role] = mean + sd * latent[:, col[role]]
    for role in ("dist_boundary", "slope"):
        cov[role] = _gamma_ppf(u[:, col[role]], *MOMENTS[role])
    for role in COUNT_FLOORS:
        cov[role] = _count_ppf(u[:, col[role]], role)

    segment = np.searchsorted(np.cumsum(SEGMENT_SHARES), u[:, col["segment"]], side="right")
    for k in range(3):
        cov[f"seg{k + 1}"] = (segment == k).astype(np.float64)

    # districts are contiguous bands of distance to Potosi
    district = np.minimum(
        (u[:, col["dist_potosi"]] * cfg.n_districts).astype(int), cfg.n_districts - 1
    )
    cov["district_id"] = np.array([f"D{k + 1:03d}" for k in district])
    return cov


def _calibrate_intercept(index: np.ndarray, cfg: DgpConfig) -> float:
    scaled = cfg.selection_strength * index

    def gap(a: float) -> float:
        return float(np.mean(expit(a + scaled))) - cfg.target_treated_share

    low, high = BISECTION_BRACKET
    if gap(low) * gap(high) > 0:
        raise CalibrationFailure(
            "Treated share cannot be bracketed",
            {"target": cfg.target_treated_share, "selection_strength": cfg.selection_strength},
        )
    return float(optimize.bisect(gap, low, high, xtol=1e-12))


@lru_cache(maxsize=8)
def _population(key: str) -> GroundTruth:
    cfg = DgpConfig.model_validate_json(key)
    rng = rng_for(DEFAULT_SEED, "population")
    latent = _latent_normals(POPULATION_DRAWS, cfg, rng)
    col_pot = COPULA_DIMS.index("dist_potosi")
    col_bnd = COPULA_DIMS.index("dist_boundary")
    mean, sd = MOMENTS["dist_potosi"]
    dist_potosi = mean + sd * latent[:, col_pot]
    dist_boundary = _gamma_ppf(stats.norm.cdf(latent[:, col_bnd]), *MOMENTS["dist_boundary"])

    index = _selection_index(dist_potosi, dist_boundary)
    intercept = _calibrate_intercept(index, cfg)
    m = expit(intercept + cfg.selection_strength * index)
    tau = treatment_effect(cfg, dist_potosi)
    weight = m * (1 - m)

    if cfg.effect_mode is EffectMode.CONSTANT:
        ate = atte = plr_limit = cfg.true_theta
    else:
        if cfg.effect_mode is EffectMode.LINEAR:
            ate = cfg.true_theta
        else:
            ate = cfg.true_theta * 0.5
        atte = float(np.sum(m * tau) / np.sum(m))
        plr_limit = float(np.sum(weight * tau) / np.sum(weight))
    return GroundTruth(
        ate=ate,
        atte=atte,
        plr_limit=plr_limit,
        treated_share=float(m.mean()),
        intercept=intercept,
    )


def ground_truth(cfg: DgpConfig) -> GroundTruth:
    """
    Population estimands of the DGP.

    The effect averages use a fixed population sample, so the truth does not
    depend on cfg.seed or cfg.n. Constant effects are exact; the ATE of the
    linear and step modes is closed form because distance to Potosi is normal.
    """
    return _population(cfg.model_copy(update={"n": 100, "seed": 0}).model_dump_json())


def simulate(cfg: DgpConfig) -> Tuple[Dataset, GroundTruth]:
    """
    Draw a synthetic dataset.

    Args:
        cfg: DGP configuration

    Returns:
        Dataset in the household schema and the ground truth of the DGP

    Raises:
        CalibrationFailure: If the treated share cannot be calibrated
    """
    truth = ground_truth(cfg)
    rng = rng_for(cfg.seed, "simulate")
    cov = _draw_covariates(cfg.n, cfg, rng)

    index = _selection_index(cov["dist_potosi"], cov["dist_boundary"])
    propensity = expit(truth.intercept + cfg.selection_strength * index)
    d = (rng.random(cfg.n) < propensity).astype(np.float64)

    tau = treatment_effect(cfg, cov["dist_potosi"])
    base = MOMENTS["log_consumption"][0] - cfg.true_theta * cfg.target_treated_share
    noise = rng.normal(0.0, cfg.noise_sd, cfg.n) if cfg.noise_sd > 0 else np.zeros(cfg.n)
    y = base + tau * d + _baseline_outcome(cfg, cov) + noise

    cov["mita_dummy"] = d
    cov["log_consumption"] = y
    frame = pd.DataFrame({role: cov[role] for role in ROLES})
    logger.debug(f"Simulated {cfg.n} households, treated share {d.mean():.4f}")
    return Dataset(frame=frame), truth


def diff_in_means(y: np.ndarray, d: np.ndarray) -> Tuple[float, float]:
    """Difference of group means with the unequal-variance standard error."""
    treated, control = y[d == 1], y[d == 0]
    theta = float(treated.mean() - control.mean())
    se = float(np.sqrt(treated.var(ddof=1) / len(treated) + control.var(ddof=1) / len(control)))
    return theta, se


def run_estimator(ds: Dataset, estimator: EstimatorSpec, seed: int) -> Tuple[float, float]:
    """Apply one estimator to a dataset and return (theta, se)."""
    dm = build_design(ds, estimator.design)
    kind = estimator.kind
    if kind is EstimatorKind.DIFF_IN_MEANS:
        return diff_in_means(dm.y, dm.d)
    if kind is EstimatorKind.OLS:
        cell = cell_result(dm, estimator.design)
        return cell.coef, cell.se
    cfg = estimator.dml.model_copy(update={"seed": seed})
    estimate = estimate_effect(dm, cfg, kind.estimand)
    return estimate.theta, estimate.se


def _replicate(cfg: DgpConfig, estimator: EstimatorSpec, rep: int) -> Tuple[float, float]:
    rep_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, "rep", rep)})
    ds, _ = simulate(rep_cfg)
    return run_estimator(ds, estimator, derive_seed(cfg.seed, "estimator", rep))


def monte_carlo(
    cfg: DgpConfig,
    estimator: Optional[EstimatorSpec] = None,
    reps: int = 200,
    threads: int = 1,
) -> McReport:
    """
    Repeatedly simulate and estimate, and score the estimates against the truth.

    Every replication has its own derived seed, so the report does not depend
    on the number of threads.

    Args:
        cfg: DGP configuration
        estimator: Estimator to evaluate
        reps: Number of replications (at least 2)
        threads: Worker threads

    Returns:
        Monte Carlo report

    Raises:
        ConfigError: If reps < 2
        McUnstable: If more than 5% of replications fail
    """
    estimator = estimator or EstimatorSpec()
    if reps < 2:
        raise ConfigError("Monte Carlo needs at least 2 replications", {"reps": reps})

    truth_key = estimator.kind.truth_key
    truth = ground_truth(cfg).for_estimand(truth_key)

    batch = TaskBatch()
    for rep in range(reps):
        batch.add(_replicate, cfg, estimator, rep, task_id=str(rep))
    result = batch.run(threads=threads)

    failures: Dict[int, str] = {}
    rep_ids, thetas, ses = [], [], []
    for rep in range(reps):
        error = result.get_error(str(rep))
        if error is not None:
            failures[rep] = f"{type(error).__name__}: {error}"
            logger.warning(f"Replication {rep} failed: {failures[rep]}")
            continue
        theta, se = result.get_result(str(rep))
        rep_ids.append(rep)
        thetas.append(theta)
        ses.append(se)

    if len(failures) > MAX_FAILURE_SHARE * reps or len(thetas) < 2:
        raise McUnstable(f"{len(failures)} of {reps} replications failed", failures)

    est = np.array(thetas)
    se_arr = np.array(ses)
    errors = est - truth
    sd_theta = float(est.std(ddof=1))
    report = McReport(
        estimator=estimator.kind,
        truth_key=truth_key,
        truth=truth,
        reps=reps,
        mean_bias=float(errors.mean()),
        rmse=float(np.sqrt(np.mean(errors**2))),
        coverage95=float(np.mean(np.abs(errors) <= 1.96 * se_arr)),
        mean_se=float(se_arr.mean()),
        sd_theta=sd_theta,
        mc_se=sd_theta / np.sqrt(len(est)),
        rep_ids=rep_ids,
        estimates=[float(v) for v in est],
        ses=[float(v) for v in se_arr],
        failures=failures,
    )
    logger.info(
        f"Monte Carlo {estimator.kind.value}: bias {report.mean_bias:.4f}, "
        f"rmse {report.rmse:.4f}, coverage {report.coverage95:.3f}"
    )
    return report
