import logging
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.stats import norm

from mitadml.core.batch import TaskBatch
from mitadml.core.design import build_design
from mitadml.core.exceptions import SingularDesign, TooFewClusters
from mitadml.core.report import format_cell, render_grid, stars_for, to_tsv
from mitadml.models.config import AnalysisOptions
from mitadml.models.dataset import Dataset
from mitadml.models.design import DesignMatrix, DesignSpec, Panel
from mitadml.models.estimate import REPLICATION_BANDS, CellResult, OlsFit, Table2Result

logger = logging.getLogger("mitadml")

TABLE2_COLUMNS = ["panel", "band_km", "coef", "se", "stars", "n", "clusters", "r2"]

PANEL_TITLES = {
    Panel.LAT_LON: "Panel A. Cubic Polynomial in Latitude and Longitude",
    Panel.DIST_POTOSI: "Panel B. Cubic Polynomial in Distance to Potosi",
    Panel.DIST_BOUNDARY: "Panel C. Cubic Polynomial in Distance to Mita Boundary",
}


def ols_fit(dm: DesignMatrix, rank_tolerance: float = 1e-10) -> OlsFit:
    """
    Least squares of y on [d | x] by pivoted QR.

    The returned vcov is the homoskedastic estimate; pass the fit to
    cluster_robust_vcov for clustered inference.

    Args:
        dm: Design matrix
        rank_tolerance: Relative tolerance on |R_jj| / |R_00| for rank detection

    Returns:
        OLS fit with the treatment coefficient labeled "mita"

    Raises:
        SingularDesign: If [d | x] is rank-deficient
    """
    x = dm.regressors
    y = dm.y
    n, k = x.shape
    names = dm.regressor_names

    q, r, piv = linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rank_tolerance * diag[0])) if k else 0
    if rank < k:
        dependent = [names[j] for j in piv[rank:]]
        raise SingularDesign(
            "Regressors are linearly dependent",
            {"rank": rank, "columns": k, "dependent": ",".join(dependent)},
        )

    beta = np.empty(k)
    beta[piv] = linalg.solve_triangular(r, q.T @ y)
    r_inv = linalg.solve_triangular(r, np.eye(k))
    xtx_inv = np.empty((k, k))
    xtx_inv[np.ix_(piv, piv)] = r_inv @ r_inv.T

    residuals = y - x @ beta
    ssr = float(residuals @ residuals)
    sigma2 = ssr / (n - k) if n > k else float("nan")
    centered = y - y.mean() if dm.include_intercept else y
    sst = float(centered @ centered)
    r_squared = 1.0 - ssr / sst if sst > 0 else 0.0

    return OlsFit(
        beta=beta,
        residuals=residuals,
        vcov=sigma2 * xtx_inv,
        xtx_inv=xtx_inv,
        r_squared=float(np.clip(r_squared, 0.0, 1.0)),
        n=n,
        k=k,
        column_names=names,
    )


def cluster_sums(values: np.ndarray, cluster_ids: np.ndarray) -> np.ndarray:
    """Sum rows of values within each cluster; clusters ordered by first appearance."""
    codes, _ = pd.factorize(pd.Series(cluster_ids))
    frame = pd.DataFrame(np.asarray(values).reshape(len(codes), -1), index=codes)
    return frame.groupby(level=0, sort=True).sum().to_numpy()


def cluster_robust_vcov(
    fit: OlsFit,
    regressors: np.ndarray,
    cluster_ids: np.ndarray,
    correction: Literal["CR0", "CR1"] = "CR1",
) -> np.ndarray:
    """
    Cluster-robust sandwich covariance of the OLS coefficients.

    V = c (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1 with
    c = G/(G-1) * (n-1)/(n-k) for CR1 and c = 1 for CR0.

    Args:
        fit: OLS fit
        regressors: The regressor matrix the fit was computed on
        cluster_ids: Cluster label per row
        correction: Small-sample correction

    Returns:
        Symmetric k x k covariance matrix

    Raises:
        TooFewClusters: If fewer than two clusters are present
    """
    n, k = fit.n, fit.k
    groups = cluster_sums(regressors * fit.residuals[:, None], cluster_ids)
    g = groups.shape[0]
    if g < 2:
        raise TooFewClusters("Clustered inference needs at least 2 clusters", {"clusters": g})

    meat = groups.T @ groups
    vcov = fit.xtx_inv @ meat @ fit.xtx_inv
    if correction == "CR1":
        vcov *= (g / (g - 1)) * ((n - 1) / (n - k))
    return (vcov + vcov.T) / 2


def cell_result(
    dm: DesignMatrix,
    spec: DesignSpec,
    options: Optional[AnalysisOptions] = None,
) -> CellResult:
    """Fit one design and summarize the treatment coefficient with clustered inference."""
    options = options or AnalysisOptions()
    fit = ols_fit(dm, options.rank_tolerance)
    vcov = cluster_robust_vcov(fit, dm.regressors, dm.cluster_ids, options.cluster_correction)
    coef = fit.coef("mita")
    se = float(np.sqrt(vcov[0, 0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = float(np.divide(coef, se))
    p_value = float(2 * norm.sf(abs(t_stat))) if np.isfinite(t_stat) else (0.0 if coef else 1.0)
    return CellResult(
        panel=spec.panel,
        band_km=spec.band_km,
        coef=coef,
        se=se,
        t_stat=t_stat,
        p_value=p_value,
        stars=stars_for(p_value),
        n=dm.n,
        clusters=int(pd.Series(dm.cluster_ids).nunique()),
        r_squared=fit.r_squared,
        treated_share=float(dm.d.mean()),
    )


def replication_specs() -> List[DesignSpec]:
    """The nine designs of the replication grid, panel-major."""
    return [
        DesignSpec(panel=panel, band_km=band, geo=True, fe=True, demo=True, intercept=True)
        for panel in Panel
        for band in REPLICATION_BANDS
    ]


def replicate_table2(ds: Dataset, options: Optional[AnalysisOptions] = None) -> Table2Result:
    """
    Run the nine panel-by-band regressions of the living-standards table.

    Every cell includes geography controls, boundary segment fixed effects and
    demographics, with standard errors clustered by district.

    Args:
        ds: Household dataset
        options: Analysis options (threads, cluster correction)

    Returns:
        Grid of cell results
    """
    options = options or AnalysisOptions()

    def _cell(spec: DesignSpec) -> CellResult:
        return cell_result(build_design(ds, spec), spec, options)

    batch = TaskBatch()
    for spec in replication_specs():
        batch.add(_cell, spec, task_id=f"{spec.panel.letter}{int(spec.band_km)}")
    cells = batch.run(threads=options.threads).ordered_results()
    for cell in cells:
        logger.info(
            f"Panel {cell.panel.letter} band {cell.band_km:g}: "
            f"{cell.coef:.4f}{cell.stars} ({cell.se:.3f}), n={cell.n}"
        )
    return Table2Result(cells=cells)


def table2_tsv(result: Table2Result, digits: int = 6) -> str:
    """Machine-readable grid, one row per cell."""
    return to_tsv([cell.row() for cell in result.cells], TABLE2_COLUMNS, digits)


def render_table2(result: Table2Result) -> str:
    """Aligned-text grid: panels as rows, bands as columns, footer with sample counts."""
    headers = [f"<{band:g} km" for band in REPLICATION_BANDS]
    panels = []
    for panel in Panel:
        cells = [result.cell(panel, band) for band in REPLICATION_BANDS]
        top, bottom = zip(*(format_cell(c.coef, c.se, c.stars) for c in cells))
        r2 = [f"{c.r_squared:.3f}" for c in cells]
        panels.append((PANEL_TITLES[panel], [("Mita", list(top)), ("", list(bottom)), ("R2", r2)]))

    first = [result.cell(Panel.LAT_LON, band) for band in REPLICATION_BANDS]
    footer = [
        ("Geo. controls", ["yes"] * len(first)),
        ("Boundary F.E.s", ["yes"] * len(first)),
        ("Clusters", [str(c.clusters) for c in first]),
        ("Observations", [str(c.n) for c in first]),
    ]
    shares = ", ".join(f"{c.treated_share:.0%}" for c in first if c.treated_share is not None)
    notes = (
        "Robust standard errors, adjusted for clustering by district, in parentheses. "
        f"Share of mita households by band: {shares}. "
        "* significant at 10%, ** at 5%, *** at 1%."
    )
    return render_grid(
        "Living Standards",
        "Dependent variable: log equiv. household consumption",
        headers,
        panels,
        footer,
        notes,
    )
