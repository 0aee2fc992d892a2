"""NPY v1.0 volume container: magic, version, header length, padded dict header, raw payload."""
from __future__ import annotations
import ast
import logging
import struct
from pathlib import Path

import numpy as np

from ..core.errors import BadMagicError, HeaderError, TruncatedPayloadError, UnsupportedDtypeError

logger = logging.getLogger("KneeXAI.Container")

MAGIC = b"\x93NUMPY"
VERSION = (1, 0)
ALIGNMENT = 64
SUPPORTED_DESCR = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "|u1": np.dtype("|u1")}


def _descr(array: np.ndarray, path: Path) -> str:
    descr = array.dtype.str
    if descr not in SUPPORTED_DESCR:
        raise UnsupportedDtypeError(f"Unsupported dtype {descr}; expected one of {sorted(SUPPORTED_DESCR)}", str(path))
    return descr


def encode_header(descr: str, shape: tuple[int, ...]) -> bytes:
    """Preamble plus header padded with spaces so the payload starts on a 64-byte boundary."""
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {tuple(shape)!r}, }}"
    preamble = len(MAGIC) + 2 + 2
    padding = -(preamble + len(text) + 1) % ALIGNMENT
    header = (text + " " * padding + "\n").encode("latin1")
    return MAGIC + bytes(VERSION) + struct.pack("<H", len(header)) + header


def write_container(array: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    array = np.asarray(array)
    descr = _descr(array, path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(encode_header(descr, array.shape))
        handle.write(np.ascontiguousarray(array).tobytes(order="C"))
    logger.debug(f"Wrote {array.shape} {descr} container to {path}")
    return path


def _parse_header(text: str, path: Path) -> tuple[np.dtype, tuple[int, ...], bool]:
    try:
        header = ast.literal_eval(text.strip())
    except (ValueError, SyntaxError) as e:
        raise HeaderError(f"Header is not a Python literal: {e}", str(path))
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise HeaderError(f"Header must hold exactly descr, fortran_order and shape, got {header!r}", str(path))
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise HeaderError(f"Invalid shape {shape!r}", str(path))
    if not isinstance(fortran, bool):
        raise HeaderError(f"Invalid fortran_order {fortran!r}", str(path))
    if descr not in SUPPORTED_DESCR:
        raise UnsupportedDtypeError(f"Unsupported dtype {descr!r}", str(path))
    return SUPPORTED_DESCR[descr], shape, fortran


def read_container(path: str | Path) -> np.ndarray:
    """Read an NPY file written by write_container or numpy.save (versions 1.0 to 3.0)."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError("File does not start with the NPY magic string", str(path))
    if len(raw) < len(MAGIC) + 2:
        raise HeaderError("File ends inside the version field", str(path))
    major = raw[len(MAGIC)]
    if major == 1:
        size_format, start = "<H", len(MAGIC) + 4
    elif major in (2, 3):
        size_format, start = "<I", len(MAGIC) + 6
    else:
        raise HeaderError(f"Unsupported NPY version {major}.{raw[len(MAGIC) + 1]}", str(path))
    if len(raw) < start:
        raise HeaderError("File ends inside the header length field", str(path))
    header_len = struct.unpack(size_format, raw[start - struct.calcsize(size_format): start])[0]
    if len(raw) < start + header_len:
        raise HeaderError("File ends inside the header", str(path))
    encoding = "utf-8" if major == 3 else "latin1"
    dtype, shape, fortran = _parse_header(raw[start: start + header_len].decode(encoding), path)

    count = int(np.prod(shape, dtype=np.int64))
    needed = count * dtype.itemsize
    payload = raw[start + header_len:]
    if len(payload) < needed:
        raise TruncatedPayloadError(f"Payload holds {len(payload)} bytes, header requires {needed}", str(path))
    array = np.frombuffer(payload[:needed], dtype=dtype, count=count)
    return array.reshape(shape, order="F" if fortran else "C").copy()
