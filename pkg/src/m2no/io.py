"""Binary field container and the record formats built on it.

A file holds one or more records.  Each record is the 8-byte magic
``M2NOFLD1``, a little-endian uint64 header length, a UTF-8 ``key=value``
header block (one pair per line), and a raw little-endian float64 payload
whose length is implied by the header's shape.  Field files hold exactly
one record; pyramid and checkpoint files are record sequences with a
``block``/``name`` key identifying each entry.  Writes go to a temporary
file in the target directory followed by an atomic rename.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import FieldFileError
from .grids import Field
from .model import ModelParams, init_params, named_tensors
from .transforms import CoeffPyramid, Detail2D

MAGIC = b"M2NOFLD1"
_HEADER_LEN_BYTES = 8


def _encode_header(header: dict) -> bytes:
    lines = [f"{key}={value}" for key, value in header.items()]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _decode_header(raw: bytes) -> dict:
    header = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FieldFileError(f"malformed header line: {line!r}")
        key, value = line.split("=", 1)
        header[key] = value
    return header


def _shape_of(header: dict) -> tuple[int, ...]:
    try:
        shape = tuple(int(s) for s in header["shape"].split(",") if s != "")
    except (KeyError, ValueError) as exc:
        raise FieldFileError(f"missing or malformed shape in header: {exc}") from exc
    return shape


def write_records(path, records) -> None:
    """Atomically write a sequence of (header dict, float64 array) records."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    blobs = []
    for header, payload in records:
        payload = np.ascontiguousarray(payload, dtype="<f8")
        full = dict(header)
        full.setdefault("dtype", "float64")
        full.setdefault("endianness", "little")
        full["shape"] = ",".join(str(s) for s in payload.shape)
        raw = _encode_header(full)
        blobs.append(
            MAGIC
            + len(raw).to_bytes(_HEADER_LEN_BYTES, "little")
            + raw
            + payload.tobytes()
        )
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(blobs))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_records(path) -> list[tuple[dict, np.ndarray]]:
    """Read every record in a container file, validating structure."""
    with open(path, "rb") as fh:
        blob = fh.read()
    records = []
    offset = 0
    while offset < len(blob):
        if blob[offset : offset + len(MAGIC)] != MAGIC:
            raise FieldFileError(f"bad magic at offset {offset} in {path}")
        offset += len(MAGIC)
        if offset + _HEADER_LEN_BYTES > len(blob):
            raise FieldFileError(f"truncated header length in {path}")
        header_len = int.from_bytes(blob[offset : offset + _HEADER_LEN_BYTES], "little")
        offset += _HEADER_LEN_BYTES
        if offset + header_len > len(blob):
            raise FieldFileError(f"truncated header in {path}")
        header = _decode_header(blob[offset : offset + header_len])
        offset += header_len
        if header.get("dtype", "float64") != "float64":
            raise FieldFileError(f"unsupported dtype {header.get('dtype')!r} in {path}")
        if header.get("endianness", "little") != "little":
            raise FieldFileError(
                f"unsupported endianness {header.get('endianness')!r} in {path}"
            )
        shape = _shape_of(header)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise FieldFileError(f"truncated payload in {path}")
        payload = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
        offset += nbytes
        records.append((header, payload.astype(float)))
    if not records:
        raise FieldFileError(f"{path} contains no records")
    return records


# ---------------------------------------------------------------------------
# fields


def write_field(path, field: Field) -> None:
    header = {
        "kind": "field",
        "dims": str(field.dim),
        "channels": str(field.channels),
        "spacing": ",".join(repr(s) for s in field.spacing),
    }
    write_records(path, [(header, field.data)])


def read_field(path) -> Field:
    records = read_records(path)
    if len(records) != 1:
        raise FieldFileError(f"{path} holds {len(records)} records, expected one field")
    header, payload = records[0]
    if header.get("kind", "field") != "field":
        raise FieldFileError(f"{path} is not a field file (kind={header.get('kind')!r})")
    dims = int(header.get("dims", payload.ndim))
    channels = int(header.get("channels", 1))
    spacing = tuple(float(s) for s in header["spacing"].split(","))
    if len(spacing) != dims:
        raise FieldFileError(f"{path}: spacing entries do not match dims")
    return Field(payload, spacing, channels)


# ---------------------------------------------------------------------------
# coefficient pyramids


def write_pyramid(path, pyramid: CoeffPyramid, spacing: tuple[float, ...] | None = None) -> None:
    base_header = {"kind": "pyramid", "k": str(pyramid.k), "dims": str(pyramid.dim),
                   "levels": str(pyramid.levels)}
    if spacing is not None:
        base_header["spacing"] = ",".join(repr(float(s)) for s in spacing)
    records = []
    for level, det in enumerate(pyramid.details):
        blocks = {"g": det} if pyramid.dim == 1 else det._asdict()
        for name, arr in blocks.items():
            records.append(({**base_header, "block": f"detail.{level}.{name}"}, arr))
    records.append(({**base_header, "block": "base"}, pyramid.base))
    write_records(path, records)


def read_pyramid(path, with_spacing: bool = False):
    records = read_records(path)
    header = records[0][0]
    if header.get("kind") != "pyramid":
        raise FieldFileError(f"{path} is not a pyramid file")
    k = int(header["k"])
    dim = int(header["dims"])
    levels = int(header["levels"])
    blocks = {rec_header["block"]: payload for rec_header, payload in records}
    details = []
    for level in range(levels):
        if dim == 1:
            details.append(blocks[f"detail.{level}.g"])
        else:
            details.append(
                Detail2D(
                    gh=blocks[f"detail.{level}.gh"],
                    hg=blocks[f"detail.{level}.hg"],
                    gg=blocks[f"detail.{level}.gg"],
                )
            )
    if "base" not in blocks:
        raise FieldFileError(f"{path} is missing the base block")
    pyramid = CoeffPyramid(k=k, dim=dim, details=tuple(details), base=blocks["base"])
    if with_spacing:
        spacing = header.get("spacing")
        return pyramid, (
            tuple(float(s) for s in spacing.split(",")) if spacing else None
        )
    return pyramid


# ---------------------------------------------------------------------------
# model checkpoints


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """Write a model as a manifest record followed by one record per tensor."""
    manifest = {
        "kind": "checkpoint",
        "k": str(params.k),
        "c": str(params.c),
        "depth": str(params.depth),
        "layers": str(params.L),
        "dim": str(params.dim),
        "steps": ",".join(str(s) for s in params.steps),
        "in_channels": str(params.in_channels),
        "out_channels": str(params.out_channels),
        "detail_maps": "on" if params.use_detail_maps else "off",
    }
    for key, value in (extra or {}).items():
        manifest[f"x-{key}"] = str(value)
    records = [(manifest, np.zeros(0))]
    for name, arr in named_tensors(params):
        records.append(({"kind": "tensor", "name": name}, arr))
    write_records(path, records)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    records = read_records(path)
    manifest = records[0][0]
    if manifest.get("kind") != "checkpoint":
        raise FieldFileError(f"{path} is not a checkpoint file")
    params = init_params(
        k=int(manifest["k"]),
        c=int(manifest["c"]),
        depth=int(manifest["depth"]),
        layers=int(manifest["layers"]),
        dim=int(manifest["dim"]),
        steps=tuple(int(s) for s in manifest["steps"].split(",")),
        in_channels=int(manifest["in_channels"]),
        out_channels=int(manifest["out_channels"]),
        use_detail_maps=manifest["detail_maps"] == "on",
        seed=0,
    )
    tensors = dict(named_tensors(params))
    seen = set()
    for header, payload in records[1:]:
        name = header.get("name")
        if name not in tensors:
            raise FieldFileError(f"{path}: unexpected tensor {name!r}")
        if tensors[name].shape != payload.shape:
            raise FieldFileError(
                f"{path}: tensor {name!r} has shape {payload.shape}, "
                f"expected {tensors[name].shape}"
            )
        tensors[name][...] = payload
        seen.add(name)
    missing = set(tensors) - seen
    if missing:
        raise FieldFileError(f"{path}: missing tensors {sorted(missing)}")
    extra = {key[2:]: value for key, value in manifest.items() if key.startswith("x-")}
    return params, extra
