"""Checkpoint files.

Layout (all integers little-endian)::

    b"MRCAE-CKPT\\0"   magic, 11 bytes
    u16               format version
    u64               total file length in bytes, CRC included
    u32               manifest length
    manifest          UTF-8 JSON: topology, dims, RLE masks, metadata, array table
    blobs             float64 arrays in manifest order
    u32               CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .conv_ops import ConvKernel, DeconvKernel
from .errors import BadMagicError, ChecksumError, FileFormatError, TruncatedFileError, VersionError
from .masking import SpatialMask
from .model import LevelBlock, MrCaeModel, WideningGroup

MAGIC = b"MRCAE-CKPT\0"
VERSION = 1
_HEADER = struct.Struct("<HQI")


def _manifest(model: MrCaeModel) -> dict:
    levels = []
    for blk in model.levels:
        levels.append({
            "dims": list(blk.dims),
            "groups": [
                {"channels": g.channels, "mask_shape": list(g.mask.shape), "mask_rle": g.mask.to_rle()}
                for g in blk.groups
            ],
        })
    return {
        "finest_dims": list(model.finest_dims),
        "n_levels": model.n_levels,
        "activation": model.activation,
        "metadata": model.metadata,
        "levels": levels,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in model.parameters()],
    }


def dumps(model: MrCaeModel) -> bytes:
    manifest = json.dumps(_manifest(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in model.parameters())
    total = len(MAGIC) + _HEADER.size + len(manifest) + len(blobs) + 4
    body = MAGIC + _HEADER.pack(VERSION, total, len(manifest)) + manifest + blobs
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: MrCaeModel, path) -> None:
    data = dumps(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def loads(buf: bytes) -> MrCaeModel:
    fixed = len(MAGIC) + _HEADER.size
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
            raise TruncatedFileError("file ends inside the magic number")
        raise BadMagicError("not an MrCAE checkpoint (bad magic)")
    if len(buf) < fixed:
        raise TruncatedFileError(f"file is {len(buf)} bytes, shorter than the {fixed}-byte header")
    version, total, manifest_len = _HEADER.unpack_from(buf, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads version {VERSION}")
    if len(buf) < total:
        raise TruncatedFileError(f"file is {len(buf)} bytes, header declares {total}")
    if len(buf) > total:
        raise FileFormatError(f"file is {len(buf)} bytes, header declares {total}")
    (stored_crc,) = struct.unpack_from("<I", buf, total - 4)
    if zlib.crc32(buf[: total - 4]) != stored_crc:
        raise ChecksumError("checkpoint CRC32 mismatch")
    if fixed + manifest_len > total - 4:
        raise FileFormatError("manifest length exceeds file body")
    try:
        man = json.loads(buf[fixed: fixed + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"unreadable manifest: {exc}") from exc

    blob = memoryview(buf)[fixed + manifest_len: total - 4]
    arrays, off = {}, 0
    for entry in man["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64)) * 8
        if off + n > len(blob):
            raise FileFormatError("weight blobs shorter than the manifest's array table")
        arrays[entry["name"]] = np.frombuffer(blob[off: off + n], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        off += n
    if off != len(blob):
        raise FileFormatError(f"{len(blob) - off} unaccounted bytes after the weight blobs")

    model = MrCaeModel(tuple(man["finest_dims"]), man["n_levels"], man["activation"], man["metadata"])
    try:
        for m, lv in enumerate(man["levels"]):
            pre = f"levels.{m}."
            blk = LevelBlock(
                index=m,
                dims=model.level_dims(m),
                deepen_conv=ConvKernel(arrays[pre + "deepen_conv.weight"], arrays[pre + "deepen_conv.bias"]),
                deepen_deconv=DeconvKernel(arrays[pre + "deepen_deconv.weight"], arrays[pre + "deepen_deconv.bias"]),
            )
            if tuple(lv["dims"]) != blk.dims:
                raise FileFormatError(f"level {m} dims {lv['dims']} inconsistent with finest dims")
            for j, g in enumerate(lv["groups"]):
                gp = f"{pre}groups.{j}."
                mask = SpatialMask.from_rle(g["mask_rle"], tuple(g["mask_shape"]))
                blk.groups.append(WideningGroup(
                    conv=ConvKernel(arrays[gp + "conv.weight"], arrays[gp + "conv.bias"]),
                    deconv=DeconvKernel(arrays[gp + "deconv.weight"], arrays[gp + "deconv.bias"]),
                    mask=mask,
                    activation=model.activation,
                ))
            model.levels.append(blk)
    except KeyError as exc:
        raise FileFormatError(f"manifest references missing array {exc}") from exc
    return model


def load_checkpoint(path) -> MrCaeModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
