"""Minimal world-aligned raster container with ESRI ASCII and CSV export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NODATA = -9999.0


@dataclass(frozen=True)
class Raster:
    """2D grid of values over world x-y; ``values[iy, ix]`` covers the cell
    whose lower-left corner is ``origin_xy + (ix, iy) * cell_size``. Empty
    cells are NaN."""

    origin_xy: tuple[float, float]
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("raster values must be 2D")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin_xy", (float(self.origin_xy[0]), float(self.origin_xy[1])))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.values.shape
        xs = self.origin_xy[0] + (np.arange(nx) + 0.5) * self.cell_size
        ys = self.origin_xy[1] + (np.arange(ny) + 0.5) * self.cell_size
        return xs, ys

    def write_esri_ascii(self, path) -> None:
        """ESRI ASCII grid (rows from north to south, NaN as NODATA)."""
        ny, nx = self.values.shape
        header = (
            f"ncols {nx}\n"
            f"nrows {ny}\n"
            f"xllcorner {self.origin_xy[0]:.6f}\n"
            f"yllcorner {self.origin_xy[1]:.6f}\n"
            f"cellsize {self.cell_size:.6f}\n"
            f"NODATA_value {NODATA:g}\n"
        )
        body = np.where(np.isfinite(self.values), self.values, NODATA)[::-1]
        with open(path, "w") as fh:
            fh.write(header)
            np.savetxt(fh, body, fmt="%.6f")

    def write_csv(self, path) -> None:
        """x,y,value rows (cell centers) for the non-empty cells."""
        xs, ys = self.cell_centers()
        with open(path, "w") as fh:
            fh.write("x,y,value\n")
            for iy in range(self.values.shape[0]):
                for ix in range(self.values.shape[1]):
                    v = self.values[iy, ix]
                    if np.isfinite(v):
                        fh.write(f"{xs[ix]:.6f},{ys[iy]:.6f},{v:.6f}\n")


def read_esri_ascii(path) -> Raster:
    """Parse an ESRI ASCII grid written by :meth:`Raster.write_esri_ascii`."""
    with open(path) as fh:
        header = {}
        for _ in range(6):
            key, value = fh.readline().split()
            header[key.lower()] = float(value)
        values = np.loadtxt(fh, ndmin=2)[::-1]
    nodata = header.get("nodata_value", NODATA)
    values = np.where(values == nodata, np.nan, values)
    return Raster(
        origin_xy=(header["xllcorner"], header["yllcorner"]),
        cell_size=header["cellsize"],
        values=values,
    )
