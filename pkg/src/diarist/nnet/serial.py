"""One binary container for model checkpoints, score files and embeddings.

Byte layout (documented in the README):

    bytes 0..3    magic b"DRS1"
    bytes 4..7    uint32 little-endian: header length H
    bytes 8..8+H  UTF-8 JSON header; must contain "kind" and "shape"
    rest          little-endian float32 payload, C order, prod(shape) values

Model headers carry the architecture descriptor and training metadata;
score headers carry the sliding-window geometry.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import SlidingWindow
from .model import ArchSpec, SequenceModel

MAGIC = b"DRS1"


class BlobFormatError(ValueError):
    pass


def write_blob(path, header: dict, payload: np.ndarray) -> None:
    header = dict(header)
    header["shape"] = list(payload.shape)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def read_blob(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BlobFormatError(f"{path}: bad magic {magic!r}")
        (length,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(length).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f4")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) if shape else payload.size
    if payload.size != expected:
        raise BlobFormatError(
            f"{path}: payload has {payload.size} values, header says {expected}"
        )
    return header, payload.reshape(shape).astype(np.float64)


def save_model(path, model: SequenceModel) -> None:
    write_blob(
        path,
        {"kind": "model", "arch": model.arch.to_dict(), "meta": model.meta},
        model.params,
    )


def load_model(path) -> SequenceModel:
    header, params = read_blob(path)
    if header.get("kind") != "model":
        raise BlobFormatError(f"{path}: not a model checkpoint")
    arch = ArchSpec.from_dict(header["arch"])
    return SequenceModel(arch, params, header.get("meta", {}))


def save_scores(path, scores: np.ndarray, window: SlidingWindow) -> None:
    write_blob(
        path,
        {
            "kind": "scores",
            "window": {"start": window.start, "step": window.step,
                       "window": window.window},
        },
        scores,
    )


def load_scores(path) -> tuple[np.ndarray, SlidingWindow]:
    header, data = read_blob(path)
    if header.get("kind") != "scores":
        raise BlobFormatError(f"{path}: not a score file")
    w = header["window"]
    return data, SlidingWindow(w["start"], w["step"], w["window"])
