"""Image, overlay and profile exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from ..geometry import ImageGrid

DB_FLOOR = -40.0


class AmbiguousPeakError(ValueError):
    """The image maximum is attained at more than one pixel."""


def magnitude_db(image, floor: float = DB_FLOOR) -> np.ndarray:
    """Peak-normalised magnitude in dB, clipped below at ``floor``.

    A zero image maps to ``floor`` everywhere.
    """
    mag = np.abs(np.asarray(image))
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return np.full(mag.shape, floor)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    return np.maximum(db, floor)


def _to_bytes(db: np.ndarray, floor: float) -> np.ndarray:
    return np.rint(255.0 * (db - floor) / (-floor)).astype(np.uint8)


def export_image(image, path: str | Path, grid: ImageGrid | None = None, floor: float = DB_FLOOR) -> np.ndarray:
    """Write an 8-bit binary PGM of the dB magnitude (peak = 255, ``floor`` = 0).

    ``image`` is a 2D array or a flat vector on ``grid``.  Rows are written
    with increasing ``y`` upwards.  A JSON sidecar ``<path>.json`` records
    the axes.  Returns the written byte array.
    """
    img = np.asarray(image)
    if grid is not None:
        img = img.reshape(grid.shape)
    if img.ndim != 2:
        raise ValueError("export_image needs a 2D image")
    if not np.all(np.isfinite(img)):
        raise ValueError("image has non-finite entries")
    pix = _to_bytes(magnitude_db(img, floor), floor)[::-1]
    path = Path(path)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    meta = {"width": w, "height": h, "db_floor": floor, "rows": "y decreasing from top"}
    if grid is not None:
        meta.update(x=grid.x.tolist(), y=grid.y.tolist(), spacing=grid.spacing, height_m=grid.height)
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))
    return pix


def colourize_overlay(channel_images, path: str | Path, grid: ImageGrid | None = None) -> np.ndarray:
    """Write an 8-bit PPM with channel ``c`` of the image in colour ``c``.

    Magnitudes are scaled by one common maximum, so pixels where the three
    images agree are grey and a brighter channel tints its primary.
    """
    imgs = [np.abs(np.asarray(a, dtype=complex)) for a in channel_images]
    if len(imgs) != 3:
        raise ValueError("exactly three channel images are required")
    if grid is not None:
        imgs = [a.reshape(grid.shape) for a in imgs]
    if not (imgs[0].shape == imgs[1].shape == imgs[2].shape) or imgs[0].ndim != 2:
        raise ValueError("channel images must be 2D with equal dimensions")
    stack = np.stack(imgs, axis=-1)
    peak = stack.max()
    scaled = stack / peak if peak > 0 else stack
    rgb = np.rint(255.0 * scaled).astype(np.uint8)[::-1]
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
    return rgb


def read_pnm(path: str | Path) -> np.ndarray:
    """Minimal reader for the binary PGM/PPM files written here."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    channels = {b"P5": 1, b"P6": 3}[magic]
    if maxval != 255:
        raise ValueError("only 8-bit files are supported")
    pix = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * channels)
    return pix.reshape((h, w, channels) if channels == 3 else (h, w))


def unique_peak(image: np.ndarray, rtol: float = 1e-12) -> tuple[int, ...]:
    mag = np.abs(image)
    peak = mag.max()
    hits = np.argwhere(mag >= peak * (1 - rtol))
    if len(hits) != 1:
        raise AmbiguousPeakError(f"maximum attained at {len(hits)} pixels")
    return tuple(hits[0])


def sidelobe_profile(image, grid: ImageGrid, direction, step: float | None = None,
                     through=None) -> tuple[np.ndarray, np.ndarray]:
    """Cut through the image along ``direction``, in dB relative to the peak.

    The cut passes through the unique peak pixel (or the point ``through``)
    and is sampled every ``step`` metres (default: the pixel spacing) by
    bilinear interpolation of the magnitude, over the part of the line
    inside the grid.

    Returns
    -------
    offsets : ndarray
        Signed distance along the cut (metres), zero at the peak.
    db : ndarray
    """
    img = np.abs(np.asarray(image)).reshape(grid.shape)
    iy, ix = unique_peak(img)
    if through is None:
        x0, y0 = grid.x[ix], grid.y[iy]
    else:
        x0, y0 = through[0], through[1]
    u = np.asarray(direction, dtype=float)[:2]
    u = u / np.linalg.norm(u)
    step = step or grid.spacing
    n = int(np.ceil(np.hypot(*grid.extent) / step))
    t = step * np.arange(-n, n + 1)
    xs, ys = x0 + t * u[0], y0 + t * u[1]
    cx = (xs - grid.x[0]) / grid.spacing
    cy = (ys - grid.y[0]) / grid.spacing
    inside = (cx >= -1e-9) & (cx <= grid.shape[1] - 1 + 1e-9) & (cy >= -1e-9) & (cy <= grid.shape[0] - 1 + 1e-9)
    vals = map_coordinates(img, [cy[inside], cx[inside]], order=1, mode="nearest")
    return t[inside], profile_db(vals)


def profile_db(values) -> np.ndarray:
    mag = np.abs(np.asarray(values))
    peak = mag.max()
    if peak == 0:
        raise AmbiguousPeakError("profile is identically zero")
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(mag / peak)


def peak_sidelobe(offsets, db) -> float:
    """Highest level outside the main lobe (bounded by the first minima either side).

    Returns ``nan`` when the cut never leaves the main lobe.
    """
    db = np.asarray(db, dtype=float)
    i0 = int(np.argmax(db))
    levels = []
    j = i0
    while j + 1 < len(db) and db[j + 1] <= db[j]:
        j += 1
    if j + 1 < len(db):
        levels.append(db[j + 1:].max())
    j = i0
    while j - 1 >= 0 and db[j - 1] <= db[j]:
        j -= 1
    if j > 0:
        levels.append(db[:j].max())
    return float(max(levels)) if levels else float("nan")


def write_profile_csv(path: str | Path, offsets, db) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["offset_m", "db"])
        for t, v in zip(offsets, db):
            w.writerow([repr(float(t)), repr(float(v))])
