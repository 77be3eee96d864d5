"""Point-cloud and raster text formats.

Point files are whitespace-delimited UTF-8 text, one point per line, with
`#` starting a comment. Supported column layouts ("schemas"):

    xyz      x y z
    xyzL     x y z label
    xyzirg   x y z ir r g
    xyzirgL  x y z ir r g label

Raw survey exports with extra columns (intensity, return counts) go
through parse_points_columns with an explicit layout instead.

Rasters come from two carriers: ESRI ASCII grids (DTM/DSM heights) and
plain-text PPM `P3` images (IR,R,G bands) with a 6-line ESRI world file
sidecar. Internally a Raster stores the world coordinate of the
upper-left pixel *center*; ASCII-grid corner coordinates are converted on
parse.
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError

__all__ = [
    "PointCloud", "Raster", "ParseError", "SchemaError", "SamplingError",
    "BoundsError", "parse_points", "parse_points_columns", "write_points",
    "load_points", "save_points", "parse_ascii_grid", "write_ascii_grid",
    "read_ascii_grid", "read_ppm_image", "write_ppm_image", "sample_raster",
]

SCHEMAS = {"xyz": (False, False), "xyzL": (False, True),
           "xyzirg": (True, False), "xyzirgL": (True, True)}


class ParseError(ValueError):
    """Malformed text input; the message carries the 1-based line number."""


class SchemaError(ParseError):
    """Input structure disagrees with the declared schema."""


class SamplingError(ValueError):
    """Raster query could not produce a value (nodata neighborhood)."""


class BoundsError(ValueError):
    """Raster query outside the clamped extent."""


@dataclass
class PointCloud:
    """N points with optional spectral triplet (IR,R,G) and class labels."""

    xyz: np.ndarray                    # (N,3) float64, meters
    spectral: np.ndarray | None = None # (N,3) float64, 0..255
    labels: np.ndarray | None = None   # (N,) int32

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if self.spectral is not None:
            self.spectral = np.asarray(self.spectral, dtype=np.float64).reshape(-1, 3)
            if len(self.spectral) != len(self.xyz):
                raise ShapeError("spectral length != point count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32).reshape(-1)
            if len(self.labels) != len(self.xyz):
                raise ShapeError("labels length != point count")

    def __len__(self):
        return len(self.xyz)

    @property
    def has_spectral(self):
        return self.spectral is not None

    @property
    def has_labels(self):
        return self.labels is not None

    def select(self, idx):
        """New cloud restricted to the given point indices."""
        return PointCloud(
            self.xyz[idx],
            self.spectral[idx] if self.spectral is not None else None,
            self.labels[idx] if self.labels is not None else None,
        )


@dataclass
class Raster:
    """Georeferenced grid; data is (bands, height, width), row 0 = north."""

    data: np.ndarray
    origin_x: float       # world x of upper-left pixel center
    origin_y: float       # world y of upper-left pixel center
    cell_size: float
    nodata: float = -9999.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[None, :, :]
        if self.data.ndim != 3:
            raise ShapeError(f"raster data must be 2-D or 3-D, got {self.data.shape}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# point files

def parse_points(stream, has_spectral, has_label):
    """Parse a point file from an iterable of text lines.

    Lines are whitespace-delimited; blank lines and `#` comments are
    skipped; point order is preserved. Raises SchemaError on a wrong
    column count and ParseError on anything non-numeric or non-finite.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    ncols = 3 + (3 if has_spectral else 0) + (1 if has_label else 0)
    xyz, spectral, labels = [], [], []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != ncols:
            raise SchemaError(
                f"line {lineno}: expected {ncols} columns, got {len(toks)}")
        try:
            vals = [float(t) for t in toks[:3 + (3 if has_spectral else 0)]]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"line {lineno}: non-finite value")
        xyz.append(vals[:3])
        if has_spectral:
            spectral.append(vals[3:6])
        if has_label:
            try:
                lab = int(toks[-1])
            except ValueError:
                raise ParseError(f"line {lineno}: label must be an integer") from None
            if lab < 0:
                raise ParseError(f"line {lineno}: negative label {lab}")
            labels.append(lab)
    n = len(xyz)
    return PointCloud(
        np.array(xyz, dtype=np.float64).reshape(n, 3),
        np.array(spectral, dtype=np.float64).reshape(n, 3) if has_spectral else None,
        np.array(labels, dtype=np.int32) if has_label else None,
    )


def write_points(cloud, labels=None, probs=None):
    """Render a cloud as point-file text.

    labels overrides cloud.labels when given; probs appends one column per
    class after the label. Coordinates and spectral values are written
    with 6 decimals, labels as bare integers.
    """
    if labels is None:
        labels = cloud.labels
    if labels is not None:
        labels = np.asarray(labels).reshape(-1)
        if len(labels) != len(cloud):
            raise ShapeError(f"labels length {len(labels)} != point count {len(cloud)}")
    if probs is not None:
        probs = np.asarray(probs)
        if probs.ndim != 2 or len(probs) != len(cloud):
            raise ShapeError(
                f"probs shape {probs.shape} does not match point count {len(cloud)}")
    out = []
    for i in range(len(cloud)):
        cols = [f"{v:.6f}" for v in cloud.xyz[i]]
        if cloud.spectral is not None:
            cols += [f"{v:.6f}" for v in cloud.spectral[i]]
        if labels is not None:
            cols.append(str(int(labels[i])))
        if probs is not None:
            cols += [f"{v:.6f}" for v in probs[i]]
        out.append(" ".join(cols))
    return "\n".join(out) + ("\n" if out else "")


COLUMN_NAMES = ("x", "y", "z", "ir", "r", "g", "label")


def parse_points_columns(stream, columns):
    """Parse a point file with an explicit column layout.

    columns is a sequence naming each raw column: x, y, z, ir, r, g,
    label, or "-" for a column to discard (intensity, return counts and
    similar extras in raw survey files). x, y and z are required.
    """
    columns = [c.strip() for c in columns]
    for c in columns:
        if c not in COLUMN_NAMES and c != "-":
            raise ValueError(f"unknown column name {c!r}")
    for c in ("x", "y", "z"):
        if columns.count(c) != 1:
            raise ValueError(f"column layout must name {c!r} exactly once")
    if isinstance(stream, str):
        stream = stream.splitlines()
    spectral_cols = [c for c in ("ir", "r", "g") if c in columns]
    if spectral_cols and len(spectral_cols) != 3:
        raise ValueError("spectral columns must be all of ir, r, g or none")
    has_label = "label" in columns
    pos = {c: columns.index(c) for c in columns if c != "-"}
    xyz, spectral, labels = [], [], []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != len(columns):
            raise SchemaError(f"line {lineno}: expected {len(columns)} "
                              f"columns, got {len(toks)}")
        try:
            xyz.append([float(toks[pos[c]]) for c in ("x", "y", "z")])
            if spectral_cols:
                spectral.append([float(toks[pos[c]]) for c in ("ir", "r", "g")])
            if has_label:
                labels.append(int(toks[pos["label"]]))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in xyz[-1]):
            raise ParseError(f"line {lineno}: non-finite coordinate")
    n = len(xyz)
    return PointCloud(
        np.array(xyz, dtype=np.float64).reshape(n, 3),
        np.array(spectral, dtype=np.float64).reshape(n, 3) if spectral_cols else None,
        np.array(labels, dtype=np.int32) if has_label else None,
    )


def detect_schema(path):
    """Schema name inferred from the first data line's column count."""
    counts = {3: "xyz", 4: "xyzL", 6: "xyzirg", 7: "xyzirgL"}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            n = len(line.split())
            if n not in counts:
                raise SchemaError(f"{path}: {n} columns match no known schema")
            return counts[n]
    return "xyz"  # empty file


def load_points(path, schema="auto", columns=None):
    if columns is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_points_columns(fh, columns)
    if schema == "auto":
        schema = detect_schema(path)
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}")
    has_spectral, has_label = SCHEMAS[schema]
    with open(path, "r", encoding="utf-8") as fh:
        return parse_points(fh, has_spectral, has_label)


def save_points(path, cloud, labels=None, probs=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_points(cloud, labels, probs))


# ---------------------------------------------------------------------------
# ESRI ASCII grid

_GRID_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize",
              "nodata_value")


def parse_ascii_grid(stream):
    """Parse an ESRI ASCII grid into a single-band Raster.

    The header's lower-left corner coordinates are converted to the
    upper-left pixel-center convention used by Raster.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    header = {}
    values = []
    for lineno, raw in enumerate(stream, start=1):
        toks = raw.split()
        if not toks:
            continue
        if toks[0][0].isalpha():
            if len(toks) != 2:
                raise ParseError(f"line {lineno}: malformed header line")
            try:
                header[toks[0].lower()] = float(toks[1])
            except ValueError:
                raise ParseError(f"line {lineno}: bad header value {toks[1]!r}") from None
        else:
            try:
                values.extend(float(t) for t in toks)
            except ValueError:
                raise ParseError(f"line {lineno}: bad grid value") from None
    missing = [k for k in _GRID_KEYS if k not in header]
    if missing:
        raise ParseError(f"missing header key(s): {', '.join(missing)}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cell = header["cellsize"]
    if len(values) != ncols * nrows:
        raise SchemaError(
            f"expected {ncols * nrows} grid values, got {len(values)}")
    data = np.array(values, dtype=np.float64).reshape(nrows, ncols)
    return Raster(
        data,
        origin_x=header["xllcorner"] + cell / 2.0,
        origin_y=header["yllcorner"] + nrows * cell - cell / 2.0,
        cell_size=cell,
        nodata=header["nodata_value"],
    )


def write_ascii_grid(raster):
    """Render a 1-band raster back to ESRI ASCII grid text."""
    if raster.bands != 1:
        raise ShapeError(f"ASCII grid is single-band, raster has {raster.bands}")
    cell = float(raster.cell_size)
    lines = [
        f"ncols {raster.width}",
        f"nrows {raster.height}",
        f"xllcorner {float(raster.origin_x) - cell / 2.0!r}",
        f"yllcorner {float(raster.origin_y) - raster.height * cell + cell / 2.0!r}",
        f"cellsize {cell!r}",
        f"NODATA_value {float(raster.nodata)!r}",
    ]
    for row in raster.data[0]:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def read_ascii_grid(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ascii_grid(fh)


# ---------------------------------------------------------------------------
# PPM P3 image + world file

def _world_file_path(image_path):
    image_path = str(image_path)
    stem = image_path.rsplit(".", 1)[0] if "." in image_path else image_path
    return stem + ".wld"


def read_ppm_image(path, world_path=None):
    """Read a P3 (ASCII) PPM or P2 PGM plus its ESRI world file sidecar."""
    with open(path, "r", encoding="utf-8") as fh:
        toks = []
        for raw in fh:
            toks.extend(raw.split("#", 1)[0].split())
    if not toks or toks[0] not in ("P3", "P2"):
        raise ParseError(f"{path}: expected P3/P2 magic, got {toks[:1]}")
    bands = 3 if toks[0] == "P3" else 1
    try:
        width, height, maxval = int(toks[1]), int(toks[2]), int(toks[3])
        vals = np.array([float(t) for t in toks[4:]], dtype=np.float64)
    except (IndexError, ValueError):
        raise ParseError(f"{path}: malformed image header or samples") from None
    if vals.size != width * height * bands:
        raise SchemaError(
            f"{path}: expected {width * height * bands} samples, got {vals.size}")
    # interleaved samples -> (bands, H, W)
    data = vals.reshape(height, width, bands).transpose(2, 0, 1)
    world_path = world_path or _world_file_path(path)
    with open(world_path, "r", encoding="utf-8") as fh:
        w = [float(line.strip()) for line in fh if line.strip()]
    if len(w) != 6:
        raise ParseError(f"{world_path}: world file needs 6 lines, got {len(w)}")
    cell_x, rot1, rot2, cell_y, ox, oy = w
    if rot1 != 0.0 or rot2 != 0.0:
        raise ParseError(f"{world_path}: rotated world files are not supported")
    if not math.isclose(cell_x, -cell_y, rel_tol=1e-9):
        raise ParseError(f"{world_path}: anisotropic cell sizes are not supported")
    return Raster(data, origin_x=ox, origin_y=oy, cell_size=cell_x, nodata=-9999.0)


def write_ppm_image(path, raster, maxval=255, world_path=None):
    """Write a raster as P3/P2 text image plus world file (test fixtures)."""
    magic = "P3" if raster.bands == 3 else "P2"
    samples = raster.data.transpose(1, 2, 0).reshape(-1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{magic}\n{raster.width} {raster.height}\n{maxval}\n")
        fh.write("\n".join(str(int(round(v))) for v in samples))
        fh.write("\n")
    with open(world_path or _world_file_path(path), "w", encoding="utf-8") as fh:
        for v in (raster.cell_size, 0.0, 0.0, -raster.cell_size,
                  raster.origin_x, raster.origin_y):
            fh.write(f"{float(v)!r}\n")


# ---------------------------------------------------------------------------
# raster sampling

def sample_raster(raster, x, y, mode="bilinear"):
    """Sample every band of a raster at world coordinates (x, y).

    Bilinear blends the 4 surrounding pixel centers; nodata neighbors are
    excluded and the remaining weights renormalized. Queries up to half a
    cell outside the outermost pixel centers clamp to the edge; anything
    farther raises BoundsError. Nearest mode breaks half-way ties toward
    the lower pixel index.
    """
    cell = raster.cell_size
    px = (x - raster.origin_x) / cell
    py = (raster.origin_y - y) / cell
    w, h = raster.width, raster.height
    margin = 0.5 + 1e-9
    if not (-margin <= px <= w - 1 + margin) or not (-margin <= py <= h - 1 + margin):
        raise BoundsError(
            f"query ({x}, {y}) outside raster extent (pixel coords {px:.3f}, {py:.3f})")
    px = min(max(px, 0.0), float(w - 1))
    py = min(max(py, 0.0), float(h - 1))
    i0 = min(int(math.floor(px)), max(w - 2, 0))
    j0 = min(int(math.floor(py)), max(h - 2, 0))
    i1 = min(i0 + 1, w - 1)
    j1 = min(j0 + 1, h - 1)
    fx = px - i0
    fy = py - j0

    if mode == "nearest":
        i = i0 if fx <= 0.5 else i1
        j = j0 if fy <= 0.5 else j1
        vals = raster.data[:, j, i]
        if np.any(vals == raster.nodata):
            raise SamplingError(f"nodata at nearest pixel ({i}, {j})")
        return vals.copy()
    if mode != "bilinear":
        raise ValueError(f"mode must be 'bilinear' or 'nearest', got {mode!r}")

    neighbors = ((j0, i0, (1 - fx) * (1 - fy)), (j0, i1, fx * (1 - fy)),
                 (j1, i0, (1 - fx) * fy), (j1, i1, fx * fy))
    out = np.zeros(raster.bands, dtype=np.float64)
    for band in range(raster.bands):
        acc = 0.0
        wsum = 0.0
        for j, i, wgt in neighbors:
            v = raster.data[band, j, i]
            if v == raster.nodata:
                continue
            acc += wgt * v
            wsum += wgt
        if wsum <= 0.0:
            raise SamplingError(
                f"no valid raster neighbors at ({x}, {y}) in band {band}")
        out[band] = acc / wsum
    return out
