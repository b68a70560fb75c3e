"""Spatial grid representation and great-circle geometry.

A :class:`Grid` is a regular longitude-latitude grid with a boolean sea mask.
All statistical machinery downstream works on dense length-S vectors over the
sea cells only; the mapping between (lat, lon) cells and the flat sea index
0..S-1 lives here. Distances are great-circle kilometers on a sphere of
radius 6371 km, which keeps taper ranges of a few thousand kilometers
meaningful on a global grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

EARTH_RADIUS_KM = 6371.0


def great_circle_distance(a, b) -> float:
    """Haversine distance in kilometers between two (lon, lat) points.

    Parameters
    ----------
    a, b : tuple of float
        (longitude, latitude) in degrees. Longitude must lie in
        [-180, 180], latitude in [-90, 90].
    """
    lon1, lat1 = a
    lon2, lat2 = b
    for lon, lat in ((lon1, lat1), (lon2, lat2)):
        if not (-180.0 <= lon <= 180.0) or not (-90.0 <= lat <= 90.0):
            raise DataError(f"coordinate out of range: lon={lon}, lat={lat}")
    return float(_haversine_km(np.radians(lon1), np.radians(lat1),
                               np.radians(lon2), np.radians(lat2)))


def _haversine_km(lon1, lat1, lon2, lat2):
    """Haversine on radian inputs; broadcasts like numpy ufuncs."""
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    # clip guards roundoff for antipodal points
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class Grid:
    """Regular lon-lat grid with a sea mask.

    Attributes
    ----------
    lon : ndarray, shape (n_lon,)
        Cell-center longitudes, strictly increasing, in [-180, 180).
    lat : ndarray, shape (n_lat,)
        Cell-center latitudes, strictly increasing, in [-90, 90].
    sea_mask : ndarray of bool, shape (n_lat, n_lon)
        True where the cell is sea. Row i corresponds to lat[i].
    """

    lon: np.ndarray
    lat: np.ndarray
    sea_mask: np.ndarray
    # (n_lat, n_lon) int array, -1 on land, else the flat sea index
    sea_index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lon = np.asarray(self.lon, dtype=float)
        lat = np.asarray(self.lat, dtype=float)
        mask = np.asarray(self.sea_mask, dtype=bool)
        if lon.ndim != 1 or lat.ndim != 1:
            raise DataError("lon and lat must be 1-D arrays")
        if mask.shape != (lat.size, lon.size):
            raise DataError(
                f"sea_mask shape {mask.shape} does not match "
                f"(n_lat={lat.size}, n_lon={lon.size})")
        if np.any(np.diff(lon) <= 0) or lon[0] < -180.0 or lon[-1] >= 180.0:
            raise DataError("lon must be strictly increasing within [-180, 180)")
        if np.any(np.diff(lat) <= 0) or lat[0] < -90.0 or lat[-1] > 90.0:
            raise DataError("lat must be strictly increasing within [-90, 90]")
        if not mask.any():
            raise DataError("sea_mask has no sea cells")
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[mask] = np.arange(mask.sum())
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "sea_mask", mask)
        object.__setattr__(self, "sea_index", index)
        for arr in (self.lon, self.lat, self.sea_mask, self.sea_index):
            arr.setflags(write=False)

    @property
    def n_lon(self) -> int:
        return self.lon.size

    @property
    def n_lat(self) -> int:
        return self.lat.size

    @property
    def n_sea(self) -> int:
        """Number of sea cells S."""
        return int(self.sea_mask.sum())

    def sea_coords(self) -> np.ndarray:
        """(S, 2) array of (lon, lat) degrees for sea cells, in sea-index order."""
        ilat, ilon = np.nonzero(self.sea_mask)
        return np.column_stack([self.lon[ilon], self.lat[ilat]])


def pairwise_distances(grid: Grid, subset=None) -> np.ndarray:
    """Symmetric matrix of great-circle distances (km) between sea cells.

    Parameters
    ----------
    grid : Grid
    subset : array of int, optional
        Sea indices to restrict to; defaults to all S sea cells.

    Returns
    -------
    ndarray, shape (k, k)
        Zero diagonal, exactly symmetric.
    """
    coords = grid.sea_coords()
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64)
        if subset.size == 0:
            raise DataError("subset must be non-empty")
        if subset.min() < 0 or subset.max() >= grid.n_sea:
            raise DataError("subset contains invalid sea indices")
        coords = coords[subset]
    lon = np.radians(coords[:, 0])
    lat = np.radians(coords[:, 1])
    d = _haversine_km(lon[:, None], lat[:, None], lon[None, :], lat[None, :])
    np.fill_diagonal(d, 0.0)
    # enforce exact symmetry against float noise in the broadcast
    return (d + d.T) / 2.0


def regular_grid(n_lon: int, n_lat: int, sea_mask=None,
                 lon_start: float = None, lon_step: float = None,
                 lat_start: float = None, lat_step: float = None) -> Grid:
    """Convenience constructor for an evenly spaced grid.

    Without explicit origin/step the grid spans the globe with cell centers
    at regular intervals, mirroring a 1-degree style layout scaled to the
    requested shape. An all-sea mask is used when none is given.
    """
    if lon_step is None:
        lon_step = 360.0 / n_lon
    if lon_start is None:
        lon_start = -180.0 + lon_step / 2.0
    if lat_step is None:
        lat_step = 180.0 / n_lat
    if lat_start is None:
        lat_start = -90.0 + lat_step / 2.0
    lon = lon_start + lon_step * np.arange(n_lon)
    lat = lat_start + lat_step * np.arange(n_lat)
    if sea_mask is None:
        sea_mask = np.ones((n_lat, n_lon), dtype=bool)
    return Grid(lon=lon, lat=lat, sea_mask=sea_mask)
