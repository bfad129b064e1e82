import logging
from typing import List, Tuple

import numpy as np

from mitadml.core.data import restrict_band
from mitadml.core.exceptions import ConstantTreatment, EmptyDesign
from mitadml.models.dataset import Dataset
from mitadml.models.design import DesignMatrix, DesignSpec, Panel

logger = logging.getLogger("mitadml")

LATLON_NAMES = [
    "lon",
    "lat",
    "lon^2",
    "lon*lat",
    "lat^2",
    "lon^3",
    "lon^2*lat",
    "lon*lat^2",
    "lat^3",
]

_SHORT_NAMES = {
    "dist_potosi": "dpot",
    "dist_boundary": "dbnd",
    "elevation": "elev",
    "slope": "slope",
    "seg1": "seg1",
    "seg2": "seg2",
    "seg3": "seg3",
    "n_infants": "infants",
    "n_children": "children",
    "n_adults": "adults",
    "longitude": "lon",
    "latitude": "lat",
    "log_consumption": "lhhequiv",
}


def poly_latlon(lon, lat) -> np.ndarray:
    """
    Full bivariate cubic in longitude and latitude without the constant.

    Works on scalars and on equal-length vectors; the monomials are stacked
    along the last axis in the order of LATLON_NAMES.
    """
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    return np.stack(
        [
            lon,
            lat,
            lon**2,
            lon * lat,
            lat**2,
            lon**3,
            lon**2 * lat,
            lon * lat**2,
            lat**3,
        ],
        axis=-1,
    )


def poly_scalar(dist) -> np.ndarray:
    """(dist, dist^2, dist^3) stacked along the last axis."""
    dist = np.asarray(dist, dtype=np.float64)
    return np.stack([dist, dist**2, dist**3], axis=-1)


def _polynomial_block(ds: Dataset, panel: Panel) -> Tuple[np.ndarray, List[str]]:
    frame = ds.frame
    if panel is Panel.LAT_LON:
        block = poly_latlon(frame["longitude"].to_numpy(), frame["latitude"].to_numpy())
        return block.reshape(ds.n, 9), list(LATLON_NAMES)
    role = panel.value
    short = _SHORT_NAMES[role]
    block = poly_scalar(frame[role].to_numpy()).reshape(ds.n, 3)
    return block, [short, f"{short}^2", f"{short}^3"]


def design_columns(spec: DesignSpec) -> List[str]:
    """Column names of x for a spec, before any all-zero column is dropped."""
    names = ["const"] if spec.include_intercept else []
    if spec.panel is Panel.LAT_LON:
        names += LATLON_NAMES
    else:
        short = _SHORT_NAMES[spec.panel.value]
        names += [short, f"{short}^2", f"{short}^3"]
    for role in _control_roles(spec):
        names.append(_SHORT_NAMES[role])
    return names


def _control_roles(spec: DesignSpec) -> List[str]:
    roles = []
    if spec.include_geo_controls:
        roles += ["elevation", "slope"]
    if spec.include_boundary_fe:
        roles += ["seg1", "seg2", "seg3"]
    if spec.include_demographics:
        roles += ["n_infants", "n_children", "n_adults"]
    roles += list(spec.extra_controls)
    return roles


def build_design(ds: Dataset, spec: DesignSpec) -> DesignMatrix:
    """
    Build the outcome, treatment and covariate blocks for a design.

    The band restriction is applied first. Column order is: intercept,
    polynomial block, geography controls, boundary segment indicators,
    demographics, extra controls.

    Args:
        ds: Dataset
        spec: Design specification

    Returns:
        Design matrix

    Raises:
        EmptyDesign: If no rows remain after banding
        ConstantTreatment: If the treatment has a single state after banding
    """
    banded = restrict_band(ds, spec.band_km) if np.isfinite(spec.band_km) else ds
    if banded.n == 0:
        raise EmptyDesign(f"No rows within band {spec.band_km}", {"band_km": spec.band_km})

    d = banded.frame["mita_dummy"].to_numpy(dtype=np.float64)
    if np.unique(d).size < 2:
        raise ConstantTreatment(
            f"Treatment is constant within band {spec.band_km}", details={"n": banded.n}
        )

    blocks = []
    names: List[str] = []
    if spec.include_intercept:
        blocks.append(np.ones((banded.n, 1)))
        names.append("const")
    poly, poly_names = _polynomial_block(banded, spec.panel)
    blocks.append(poly)
    names += poly_names
    controls = _control_roles(spec)
    if controls:
        blocks.append(banded.frame[controls].to_numpy(dtype=np.float64))
        names += [_SHORT_NAMES[role] for role in controls]

    x = np.hstack(blocks)
    zero = ~x.any(axis=0)
    if zero.any():
        dropped = [name for name, z in zip(names, zero) if z]
        logger.warning(f"Dropping all-zero design columns: {', '.join(dropped)}")
        x = x[:, ~zero]
        names = [name for name, z in zip(names, zero) if not z]
    if spec.include_intercept:
        # constant columns other than const duplicate the intercept
        constant = np.all(x == x[0], axis=0) & (np.array(names) != "const")
        if constant.any():
            dropped = [name for name, c in zip(names, constant) if c]
            logger.warning(
                f"Dropping design columns collinear with the intercept: {', '.join(dropped)}"
            )
            x = x[:, ~constant]
            names = [name for name, c in zip(names, constant) if not c]

    logger.debug(
        f"Design {spec.panel.letter}/{spec.band_km}: {banded.n} rows, {len(names)} columns"
    )
    return DesignMatrix(
        y=banded.frame["log_consumption"].to_numpy(dtype=np.float64),
        d=d,
        x=x,
        cluster_ids=banded.frame["district_id"].astype(str).to_numpy(),
        column_names=names,
        include_intercept=spec.include_intercept,
    )
