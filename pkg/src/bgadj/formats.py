"""File formats: BAF1 rasters and plain-text mixture parameter files.

BAF1 is an ASCII header ``BAF1 <nx> <ny> <channels>\\n`` followed by
``nx*ny*channels`` little-endian float64 values, channels interleaved per
pixel and pixels in row-major order with x varying fastest.
"""
import io
import os

import numpy as np

from .errors import DataFormatError
from .mixture import MixtureModel, TemplateStack, VoxelGrid

BAF_MAGIC = "BAF1"
_LE = np.dtype("<f8")


def _open(path_or_file, mode):
    if isinstance(path_or_file, (str, os.PathLike)):
        return open(path_or_file, mode), True
    return path_or_file, False


def write_baf(path_or_file, values, grid):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != grid.n:
        raise ValueError(f"{values.shape[0]} rows do not fill a {grid.nx}x{grid.ny} grid")
    if not np.all(np.isfinite(values)):
        raise ValueError("BAF rasters hold finite values only")
    header = f"{BAF_MAGIC} {grid.nx} {grid.ny} {values.shape[1]}\n".encode("ascii")
    f, own = _open(path_or_file, "wb")
    try:
        f.write(header)
        f.write(np.ascontiguousarray(values, dtype=_LE).tobytes())
    finally:
        if own:
            f.close()


def read_baf(path_or_file):
    """Returns ``(grid, values)`` with ``values`` of shape ``(n, channels)``."""
    f, own = _open(path_or_file, "rb")
    try:
        header = f.readline(256)
        body = f.read()
    finally:
        if own:
            f.close()
    try:
        magic, nx, ny, ch = header.decode("ascii").split()
        nx, ny, ch = int(nx), int(ny), int(ch)
    except (UnicodeDecodeError, ValueError):
        raise DataFormatError(f"bad BAF header {header[:40]!r}") from None
    if magic != BAF_MAGIC or not header.endswith(b"\n") or min(nx, ny, ch) < 1:
        raise DataFormatError(f"bad BAF header {header[:40]!r}")
    need = nx * ny * ch * 8
    if len(body) != need:
        raise DataFormatError(f"BAF body has {len(body)} bytes, header implies {need}")
    values = np.frombuffer(body, dtype=_LE).astype(float).reshape(nx * ny, ch)
    if not np.all(np.isfinite(values)):
        raise DataFormatError("BAF raster contains non-finite values")
    return VoxelGrid(nx, ny), values


def read_templates(path_or_file):
    grid, values = read_baf(path_or_file)
    return TemplateStack(grid, values)


def write_templates(path_or_file, templates):
    write_baf(path_or_file, templates.values, templates.grid)


def _fmt(v):
    return "%.17g" % v


def format_params(model):
    lines = [f"K {model.K}", f"p {model.p}"]
    key = "gamma" if model.spatial else "pi"
    lines.append(" ".join([key] + [_fmt(v) for v in model.weights]))
    for k in range(model.K):
        lines.append(" ".join(["mu", str(k + 1)] + [_fmt(v) for v in model.means[k]]))
    for k in range(model.K):
        lines.append(f"sigma {k + 1}")
        for row in model.covs[k]:
            lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_params(text):
    """Parse the key/value parameter grammar into a :class:`MixtureModel`.

    A weight line may carry the component count before the values
    (``gamma 3 v1 v2 v3``); it must then equal ``K``.
    """
    lines = [ln.split() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln[0].startswith("#")]
    K = p = None
    weights, spatial = None, None
    means, covs = {}, {}
    pos = 0

    def floats(tokens, what):
        try:
            return [float(t) for t in tokens]
        except ValueError:
            raise DataFormatError(f"non-numeric value in {what}") from None

    def index(tok):
        try:
            k = int(tok)
        except ValueError:
            raise DataFormatError(f"bad component index {tok!r}") from None
        if K is None or not 1 <= k <= K:
            raise DataFormatError(f"component index {k} out of range")
        return k - 1

    while pos < len(lines):
        ln = lines[pos]
        pos += 1
        key = ln[0]
        if key in ("K", "p") and len(ln) == 2:
            try:
                val = int(ln[1])
            except ValueError:
                raise DataFormatError(f"bad {key} value {ln[1]!r}") from None
            if val < 1:
                raise DataFormatError(f"{key} must be positive")
            if key == "K":
                K = val
            else:
                p = val
        elif key in ("gamma", "pi"):
            if K is None:
                raise DataFormatError("K must precede the weights")
            vals = ln[1:]
            if len(vals) == K + 1 and vals[0] == str(K):
                vals = vals[1:]
            if len(vals) != K:
                raise DataFormatError(f"expected {K} weights, got {len(vals)}")
            weights, spatial = floats(vals, key), key == "gamma"
        elif key == "mu":
            if p is None or len(ln) != p + 2:
                raise DataFormatError("mu line needs an index and p values")
            means[index(ln[1])] = floats(ln[2:], "mu")
        elif key == "sigma":
            if p is None or len(ln) != 2:
                raise DataFormatError("sigma line needs an index")
            k = index(ln[1])
            rows = lines[pos:pos + p]
            pos += p
            if len(rows) != p or any(len(r) != p for r in rows):
                raise DataFormatError(f"sigma {k + 1} needs {p} rows of {p} values")
            covs[k] = [floats(r, "sigma") for r in rows]
        else:
            raise DataFormatError(f"unknown line {' '.join(ln)!r}")
    if K is None or p is None or weights is None:
        raise DataFormatError("parameter file needs K, p and a weight line")
    if sorted(means) != list(range(K)) or sorted(covs) != list(range(K)):
        raise DataFormatError("every component needs mu and sigma")
    try:
        return MixtureModel([means[k] for k in range(K)], [covs[k] for k in range(K)],
                            weights, spatial=spatial)
    except ValueError as e:
        raise DataFormatError(f"invalid parameters: {e}") from None


def write_params(path_or_file, model):
    text = format_params(model)
    f, own = _open(path_or_file, "w")
    try:
        f.write(text)
    finally:
        if own:
            f.close()


def read_params(path_or_file):
    if isinstance(path_or_file, io.TextIOBase):
        return parse_params(path_or_file.read())
    with open(path_or_file) as f:
        return parse_params(f.read())
