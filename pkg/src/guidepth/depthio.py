"""Raster and CSV serialization for depth maps, masks, and metrics.

Three formats, all byte-exact in their headers:

  PFM    grayscale float32, magic ``Pf``, dims line ``W H``, scale line
         ``-1.0`` (negative marks little-endian), rows stored bottom-up.
         Invalid pixels are written as 0 and the mask is reconstructed
         on read as value > 0.
  PGM16  binary ``P5`` with maxval 65535, big-endian samples, plus a
         ``# scale=<s>`` comment declaring the quantization step. With
         scale 1 it stores integer region labels exactly; otherwise it
         stores depth quantized to the step, zero meaning invalid.
  CSV    metric rows under the fixed header
         scene,rel,mae,imae,rmse,irmse,rmselog,d1,d2,d3.

Parse failures raise FormatError carrying the byte offset of the
offending token, so a corrupt file points at itself.
"""

import csv
import io

import numpy as np

from .data import DepthMap
from .errors import ConfigurationError, FormatError
from .metrics import MetricsReport
from .propagation import RegionMask

METRICS_HEADER = ("scene", "rel", "mae", "imae", "rmse", "irmse", "rmselog", "d1", "d2", "d3")


def _next_token(data, pos, allow_comments=False):
    """Scan one whitespace-delimited token; returns (token, start, end)."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if allow_comments and ch == b"#":
            nl = data.find(b"\n", pos)
            pos = n if nl < 0 else nl + 1
            continue
        if ch.isspace():
            pos += 1
            continue
        break
    if pos >= n:
        raise FormatError("unexpected end of header", offset=n)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], start, pos


def _int_token(data, pos, what, allow_comments=False):
    tok, start, end = _next_token(data, pos, allow_comments)
    try:
        return int(tok), end
    except ValueError:
        raise FormatError(f"expected integer {what}, got {tok!r}", offset=start) from None


def write_pfm(path, dm):
    arr = np.where(dm.valid, dm.depth, 0.0).astype("<f4")
    h, w = dm.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, start, pos = _next_token(data, 0)
    if magic != b"Pf":
        raise FormatError(
            f"bad magic {magic!r}; only grayscale 'Pf' is supported", offset=start
        )
    w, pos = _int_token(data, pos, "width")
    h, pos = _int_token(data, pos, "height")
    if w < 1 or h < 1:
        raise FormatError(f"degenerate dimensions {w}x{h}", offset=start)
    tok, tstart, pos = _next_token(data, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise FormatError(f"expected scale factor, got {tok!r}", offset=tstart) from None
    if scale == 0.0:
        raise FormatError("scale factor must be nonzero", offset=tstart)
    pos += 1  # the single whitespace byte after the scale line
    expected = w * h * 4
    if len(data) - pos < expected:
        raise FormatError(
            f"payload truncated: need {expected} bytes, found {len(data) - pos}",
            offset=len(data),
        )
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(data[pos : pos + expected], dtype=dtype)
    rows = flat.reshape(h, w)[::-1].astype(np.float64)
    return DepthMap(np.where(rows > 0, rows, 0.0), rows > 0)


def _write_pgm16(path, values, scale):
    values = np.asarray(values)
    if values.ndim != 2:
        raise ConfigurationError("pgm16 stores 2-d rasters")
    if values.min() < 0 or values.max() > 65535:
        raise ConfigurationError("pgm16 samples must fit in [0, 65535]")
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"P5\n")
        f.write(f"# scale={scale!r}\n".encode("ascii"))
        f.write(f"{w} {h}\n65535\n".encode("ascii"))
        f.write(values.astype(">u2").tobytes())


def _read_pgm16(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, start, pos = _next_token(data, 0)
    if magic != b"P5":
        raise FormatError(f"bad magic {magic!r}; expected binary 'P5'", offset=start)
    scale = 1.0
    for line in data.split(b"\n"):
        if line.startswith(b"# scale="):
            try:
                scale = float(line[len(b"# scale=") :])
            except ValueError:
                raise FormatError(
                    "unreadable scale comment", offset=data.find(line)
                ) from None
            break
    w, pos = _int_token(data, pos, "width", allow_comments=True)
    h, pos = _int_token(data, pos, "height", allow_comments=True)
    maxval, pos = _int_token(data, pos, "maxval", allow_comments=True)
    if maxval != 65535:
        raise FormatError(f"expected 16-bit maxval 65535, got {maxval}", offset=pos)
    pos += 1  # single whitespace after maxval
    expected = w * h * 2
    if len(data) - pos < expected:
        raise FormatError(
            f"payload truncated: need {expected} bytes, found {len(data) - pos}",
            offset=len(data),
        )
    values = np.frombuffer(data[pos : pos + expected], dtype=">u2").reshape(h, w)
    return values.astype(np.int64), scale


def write_region_mask(path, mask):
    _write_pgm16(path, mask.labels, 1.0)


def read_region_mask(path):
    values, scale = _read_pgm16(path)
    if scale != 1.0:
        raise FormatError(f"region masks require scale=1, file declares {scale}")
    return RegionMask(values)


def write_depth_pgm16(path, dm, scale=None):
    """Quantize depth to a uint16 raster; zero encodes invalid."""
    if scale is None:
        top = float(dm.depth[dm.valid].max()) if dm.valid.any() else 1.0
        scale = top / 65535.0
    if scale <= 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    q = np.zeros(dm.shape, dtype=np.int64)
    q[dm.valid] = np.clip(np.rint(dm.depth[dm.valid] / scale), 1, 65535).astype(np.int64)
    _write_pgm16(path, q, scale)


def read_depth_pgm16(path):
    values, scale = _read_pgm16(path)
    valid = values > 0
    return DepthMap(np.where(valid, values * scale, 0.0), valid)


def write_metrics_csv(path, rows):
    """rows: iterable of (scene_id, MetricsReport)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for scene_id, report in rows:
            writer.writerow([scene_id] + [f"{v:.9g}" for v in report.values()])


def read_metrics_csv(path):
    with open(path, "rb") as f:
        raw = f.read()
    out = []
    offset = 0
    first = True
    for line in raw.split(b"\n"):
        text = line.decode("utf-8", errors="replace").strip()
        if text:
            cells = next(csv.reader(io.StringIO(text)))
            if first:
                if tuple(cells) != METRICS_HEADER:
                    raise FormatError(
                        f"bad metrics header {cells!r}", offset=offset
                    )
                first = False
            else:
                if len(cells) != len(METRICS_HEADER):
                    raise FormatError(
                        f"expected {len(METRICS_HEADER)} columns, got {len(cells)}",
                        offset=offset,
                    )
                try:
                    values = [float(c) for c in cells[1:]]
                except ValueError:
                    raise FormatError(
                        f"unreadable metric value in row {cells!r}", offset=offset
                    ) from None
                out.append((cells[0], MetricsReport(*values)))
        offset += len(line) + 1
    if first:
        raise FormatError("empty metrics file", offset=0)
    return out


def depth_write(path, obj, format):
    """Dispatch on format: pfm/pgm16 rasters, csv metric rows."""
    if format == "pfm":
        return write_pfm(path, obj)
    if format == "pgm16":
        if isinstance(obj, RegionMask):
            return write_region_mask(path, obj)
        return write_depth_pgm16(path, obj)
    if format == "csv":
        return write_metrics_csv(path, obj)
    raise ConfigurationError(f"unknown format {format!r}; expected pfm, pgm16, or csv")


def depth_read(path, format):
    if format == "pfm":
        return read_pfm(path)
    if format == "pgm16":
        values, scale = _read_pgm16(path)
        if scale == 1.0:
            return RegionMask(values)
        valid = values > 0
        return DepthMap(np.where(valid, values * scale, 0.0), valid)
    if format == "csv":
        return read_metrics_csv(path)
    raise ConfigurationError(f"unknown format {format!r}; expected pfm, pgm16, or csv")
