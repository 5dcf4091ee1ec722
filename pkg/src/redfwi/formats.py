"""On-disk formats: the RDQ1 grid container, PGM images, CSV tables, run manifests.

RDQ1 layout (all integers unsigned 32-bit little-endian)::

    b"RDQ1" | dtype code (1 = float32 LE) | ndim | dims[ndim] | payload (row-major)

Arrays of any other float dtype are converted to float32 on write, so only
float32 input round-trips bit-exactly.
"""

import csv
import hashlib
import json
import os
import platform
import struct

import numpy as np

from .exceptions import ContractError, FormatError

MAGIC = b"RDQ1"
DTYPE_CODES = {1: np.dtype("<f4")}
FORMAT_VERSIONS = {"grid": "RDQ1", "pgm": "P5-8bit", "trace_csv": 1, "manifest": 1}
_MAX_NDIM = 32


def save_grid(path, array):
    a = np.asarray(array)
    if not np.issubdtype(a.dtype, np.number) or np.iscomplexobj(a):
        raise ContractError(f"cannot store dtype {a.dtype} in a grid file")
    if a.ndim > _MAX_NDIM:
        raise ContractError(f"too many dimensions ({a.ndim})")
    data = np.ascontiguousarray(a, dtype="<f4")
    header = MAGIC + struct.pack(f"<II{a.ndim}I", 1, a.ndim, *a.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def load_grid(path):
    """Read an RDQ1 file; raises FormatError on bad magic, dtype, dims or length."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not an RDQ1 grid file")
    code, ndim = struct.unpack_from("<II", blob, 4)
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if ndim > _MAX_NDIM:
        raise FormatError(f"{path}: implausible ndim {ndim}")
    start = 12 + 4 * ndim
    if len(blob) < start:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", blob, 12)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - start != expected:
        raise FormatError(f"{path}: payload is {len(blob) - start} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=start).reshape(dims).astype(np.float32)


def pgm_pixels(field, vmin, vmax):
    """Linear map [vmin, vmax] -> [0, 255], clipped, rounded half to even."""
    if not vmin < vmax:
        raise ContractError(f"need vmin < vmax, got ({vmin}, {vmax})")
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError("render expects a 2D field")
    scaled = np.clip((f - vmin) / (vmax - vmin), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)


def render_pgm(field, path, vmin, vmax):
    pixels = pgm_pixels(field, vmin, vmax)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return pixels


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    if len(data) != w * h:
        raise FormatError(f"{path}: pixel payload has wrong length")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, command, config, seeds, outputs):
    """Write ``manifest.json`` describing a run: command, config, seeds, formats, output hashes."""
    from . import __version__

    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "formats": FORMAT_VERSIONS,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "outputs": {name: file_sha256(os.path.join(directory, name)) for name in sorted(outputs)},
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
    return manifest


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    if hasattr(obj, "name"):
        return obj.name
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
