"""Self-describing binary artifact files and plain-text exports.

Layout: one magic line ``VOROTO <kind> v<version>\\n``, an 8-byte little-endian
header length, a UTF-8 JSON header (sorted keys), then the raw payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def write_artifact(path, kind: str, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(f"VOROTO {kind} v{FORMAT_VERSION}\n".encode())
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_artifact(path, kind: str) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    magic = data[:nl].decode(errors="replace").split()
    if len(magic) != 3 or magic[0] != "VOROTO":
        raise ArtifactError(f"{path}: not a voroto artifact")
    if magic[1] != kind:
        raise ArtifactError(f"{path}: expected a {kind} file, found {magic[1]}")
    if magic[2] != f"v{FORMAT_VERSION}":
        raise ArtifactError(f"{path}: unsupported format version {magic[2]}")
    (n,) = struct.unpack("<Q", data[nl + 1 : nl + 9])
    header = json.loads(data[nl + 9 : nl + 9 + n])
    return header, data[nl + 9 + n :]


def f64_bytes(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def f64_array(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def write_pgm(path, values: np.ndarray) -> None:
    """Plain (P2) grayscale render of a density grid indexed ``[x, y]``.

    Rows run top to bottom; solid (1) is black, void (0) is white.
    """
    img = np.asarray(values, dtype=float).T[::-1]
    gray = np.rint(255 * (1 - np.clip(img, 0, 1))).astype(int)
    h, w = gray.shape
    lines = [f"P2\n{w} {h}\n255"]
    lines += [" ".join(map(str, row)) for row in gray]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#")
              for t in line.split()]
    if tokens[0] != "P2":
        raise ArtifactError(f"{path}: not a plain PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4 : 4 + w * h], dtype=int).reshape(h, w), maxval
