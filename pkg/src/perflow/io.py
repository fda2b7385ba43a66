"""Binary tensor files, JSON manifests and columnar CSV output.

TensorFile layout (all integers little endian)::

    offset  size        field
    0       4           magic b"PFLW"
    4       4  (u32)    format version (1)
    8       4  (u32)    dtype code: 1 = IEEE-754 binary32, 2 = binary64
    12      4  (u32)    ndim
    16      8*ndim(u64) dims
    ...     prod(dims) * itemsize   row-major payload

Every writer goes through a temporary file in the target directory followed
by ``os.replace`` so readers never observe partial files.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PFLW"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x)
    if x.dtype not in CODES:
        x = x.astype(np.float64)
    code = CODES[x.dtype]
    head = MAGIC + struct.pack("<III", VERSION, code, x.ndim) + struct.pack(f"<{x.ndim}Q", *x.shape)
    return head + np.ascontiguousarray(x, dtype=DTYPES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError("not a PFLW tensor file")
    version, code, ndim = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 16)
    start = 16 + 8 * ndim
    dtype = DTYPES[code]
    n = int(np.prod(dims)) if ndim else 1
    if len(buf) - start != n * dtype.itemsize:
        raise FormatError(f"payload holds {len(buf) - start} bytes, expected {n * dtype.itemsize}")
    return np.frombuffer(buf, dtype=dtype, offset=start).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, x: np.ndarray) -> None:
    atomic_write_bytes(path, encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode())


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())


def append_csv_row(path, header, row) -> None:
    """Append one row, writing the header on first use; refuses a header change."""
    path = Path(path)
    header = list(header)
    if path.exists():
        existing, rows = read_csv(path)
        if existing != header:
            raise FormatError(f"{path} has header {existing}, refusing to append {header}")
    else:
        rows = []
    rows.append([str(v) for v in row])
    write_csv(path, header, rows)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return None, []
    return rows[0], rows[1:]
