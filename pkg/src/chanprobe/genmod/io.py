"""GMM1 binary model files. A scov model is stored as a one-component GMM."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..core import sidecar_path
from ..errors import BadMagic, EmptyDimension, TruncatedBody, VersionMismatch
from .gmm import GmmModel, ScovModel

GMM_MAGIC = b"GMM1"
GMM_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def encode_model(model: GmmModel | ScovModel) -> bytes:
    if isinstance(model, ScovModel):
        model = model.to_gmm()
    k, n = model.n_components, model.n_antennas
    rows, cols = np.tril_indices(n)
    tri = model.cholesky_factors[:, rows, cols]
    parts = [
        _HEADER.pack(GMM_MAGIC, GMM_VERSION, k, n),
        np.ascontiguousarray(model.weights, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.means, dtype="<c16").tobytes(),
        np.ascontiguousarray(tri, dtype="<c16").tobytes(),
    ]
    return b"".join(parts)


def decode_model(raw: bytes) -> GmmModel:
    if len(raw) < _HEADER.size:
        raise TruncatedBody("model file shorter than its header")
    magic, version, k, n = _HEADER.unpack_from(raw)
    if magic != GMM_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {GMM_MAGIC!r}")
    if version != GMM_VERSION:
        raise VersionMismatch(f"unsupported GMM version {version}")
    if k == 0 or n == 0:
        raise EmptyDimension("model declares K = 0 or N = 0")
    ntri = n * (n + 1) // 2
    expected = 8 * k + 16 * k * n + 16 * k * ntri
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise TruncatedBody(f"model body holds {len(body)} bytes, expected {expected}")
    off = 0
    weights = np.frombuffer(body, "<f8", k, off).astype(float)
    off += 8 * k
    means = np.frombuffer(body, "<c16", k * n, off).reshape(k, n).astype(np.complex128)
    off += 16 * k * n
    tri = np.frombuffer(body, "<c16", k * ntri, off).reshape(k, ntri)
    rows, cols = np.tril_indices(n)
    chols = np.zeros((k, n, n), dtype=np.complex128)
    chols[:, rows, cols] = tri
    covs = chols @ np.conj(np.swapaxes(chols, 1, 2))
    covs = 0.5 * (covs + np.conj(np.swapaxes(covs, 1, 2)))
    model = GmmModel(weights / weights.sum(), means, covs)
    # keep the stored factors so re-encoding is byte-identical
    model.__dict__["cholesky_factors"] = chols
    return model


def write_model(model: GmmModel | ScovModel, path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    path.write_bytes(encode_model(model))
    side = dict(meta or {})
    if isinstance(model, GmmModel) and model.fit_log:
        side.setdefault("fit_log", list(model.fit_log))
        side.setdefault("fit_info", model.info)
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_model(path: str | Path) -> GmmModel:
    return decode_model(Path(path).read_bytes())
