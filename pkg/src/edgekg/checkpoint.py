"""Binary model checkpoints, dense and sparse.

Layout (all integers little-endian):

    header  struct '<8sIIQQQII'
            magic      8 bytes  b"EKGCHKPT"
            version    u32      currently 1
            kind       u32      model kind code (see KIND_CODES)
            dim        u64
            entities   u64
            relations  u64
            norm       u32      distance norm for translational kinds
            flags      u32      bit 0 sparse, bit 1 masked, bit 2 float64

    tables  entity, relation, then projection if the kind has one.

Dense tables are raw row-major float arrays. Sparse tables store a packed
presence bitmap (one bit per element, little bit order) followed by the
surviving values only, so a checkpoint of a heavily pruned model shrinks
roughly in proportion to the surviving fraction. save_sparse falls back to
the dense layout when that would be no larger.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ShapeError
from .models import (
    COMPLEX,
    DISTMULT,
    HOLE,
    PAIRRE,
    ROTATE,
    TRANSE,
    TRANSR,
    EmbeddingModel,
    entity_width,
    relation_width,
)

MAGIC = b"EKGCHKPT"
VERSION = 1

KIND_CODES = {
    TRANSE: 0,
    TRANSR: 1,
    DISTMULT: 2,
    COMPLEX: 3,
    HOLE: 4,
    ROTATE: 5,
    PAIRRE: 6,
}
CODE_KINDS = {code: kind for kind, code in KIND_CODES.items()}

FLAG_SPARSE = 1
FLAG_MASKED = 2
FLAG_FLOAT64 = 4

_HEADER = struct.Struct("<8sIIQQQII")


def _table_order(model: EmbeddingModel) -> list[str]:
    order = ["entity", "relation"]
    if model.projection_table is not None:
        order.append("projection")
    return order


def _pack_header(model: EmbeddingModel, flags: int) -> bytes:
    if model.entity_table.dtype == np.float64:
        flags |= FLAG_FLOAT64
    if model.masked:
        flags |= FLAG_MASKED
    return _HEADER.pack(MAGIC, VERSION, KIND_CODES[model.kind], model.dim,
                        model.num_entities, model.num_relations, model.norm, flags)


def dense_byte_size(model: EmbeddingModel) -> int:
    """Size in bytes of this model saved densely, header included."""
    itemsize = model.entity_table.dtype.itemsize
    total = _HEADER.size
    for name in _table_order(model):
        total += model.tables()[name].size * itemsize
    return total


def sparse_byte_size(model: EmbeddingModel, mask: dict[str, np.ndarray]) -> int:
    """Size in bytes this model would take in the sparse layout under mask."""
    itemsize = model.entity_table.dtype.itemsize
    total = _HEADER.size
    for name in _table_order(model):
        table = model.tables()[name]
        kept = int(np.count_nonzero(mask[name]))
        total += 8 + (table.size + 7) // 8 + kept * itemsize
    return total


def save_dense(model: EmbeddingModel, path, mask: dict[str, np.ndarray] | None = None) -> int:
    """Write every element of every table. Returns bytes written."""
    dtype = "<f8" if model.entity_table.dtype == np.float64 else "<f4"
    with open(path, "wb") as f:
        f.write(_pack_header(model, flags=FLAG_MASKED if mask is not None else 0))
        for name in _table_order(model):
            table = model.tables()[name]
            if mask is not None:
                table = table * mask[name].astype(table.dtype)
            f.write(np.ascontiguousarray(table, dtype=dtype).tobytes())
    return dense_byte_size(model)


def save_sparse(model: EmbeddingModel, mask: dict[str, np.ndarray], path) -> int:
    """Write only mask-surviving elements; falls back to dense when not smaller.

    Returns bytes written. The mask is applied before writing, so positions
    it zeroes never leak stale values into the checkpoint.
    """
    for name in _table_order(model):
        if name not in mask:
            raise ShapeError(f"mask is missing table {name!r}")
        if mask[name].shape != model.tables()[name].shape:
            raise ShapeError(
                f"mask for {name!r} has shape {mask[name].shape}, "
                f"table has {model.tables()[name].shape}")
    if dense_byte_size(model) <= sparse_byte_size(model, mask):
        return save_dense(model, path, mask=mask)
    dtype = "<f8" if model.entity_table.dtype == np.float64 else "<f4"
    with open(path, "wb") as f:
        f.write(_pack_header(model, flags=FLAG_SPARSE | FLAG_MASKED))
        for name in _table_order(model):
            table = model.tables()[name]
            keep = mask[name].astype(bool).reshape(-1)
            values = np.ascontiguousarray(table.reshape(-1)[keep], dtype=dtype)
            f.write(struct.pack("<Q", int(values.size)))
            f.write(np.packbits(keep, bitorder="little").tobytes())
            f.write(values.tobytes())
    return sparse_byte_size(model, mask)


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated checkpoint while reading {what}")
    return data


def load(path) -> tuple[EmbeddingModel, dict[str, np.ndarray] | None]:
    """Read a checkpoint. Returns (model, mask); mask is None for dense saves.

    Sparse checkpoints reconstruct both the full table (zeros at dropped
    positions) and the boolean mask of surviving positions.
    """
    with open(path, "rb") as f:
        raw = _read_exact(f, _HEADER.size, path, "header")
        magic, version, code, dim, entities, relations, norm, flags = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        if code not in CODE_KINDS:
            raise FormatError(f"{path}: unknown model kind code {code}")
        kind = CODE_KINDS[code]
        dtype = np.dtype("<f8" if flags & FLAG_FLOAT64 else "<f4")
        shapes = {
            "entity": (entities, entity_width(kind, dim)),
            "relation": (relations, relation_width(kind, dim)),
        }
        if kind == TRANSR:
            shapes["projection"] = (relations, dim * dim)
        tables: dict[str, np.ndarray] = {}
        mask: dict[str, np.ndarray] | None = {} if flags & FLAG_SPARSE else None
        for name, shape in shapes.items():
            size = int(shape[0] * shape[1])
            if flags & FLAG_SPARSE:
                (kept,) = struct.unpack("<Q", _read_exact(f, 8, path, f"{name} count"))
                if kept > size:
                    raise FormatError(f"{path}: {name} table claims {kept} of {size} values")
                packed = np.frombuffer(
                    _read_exact(f, (size + 7) // 8, path, f"{name} bitmap"), dtype=np.uint8)
                keep = np.unpackbits(packed, count=size, bitorder="little").astype(bool)
                if int(np.count_nonzero(keep)) != kept:
                    raise FormatError(f"{path}: {name} bitmap disagrees with value count")
                values = np.frombuffer(
                    _read_exact(f, kept * dtype.itemsize, path, f"{name} values"), dtype=dtype)
                flat = np.zeros(size, dtype=dtype)
                flat[keep] = values
                tables[name] = flat.reshape(shape).astype(dtype.newbyteorder("="))
                mask[name] = keep.reshape(shape)
            else:
                buf = _read_exact(f, size * dtype.itemsize, path, f"{name} table")
                tables[name] = (np.frombuffer(buf, dtype=dtype)
                                .reshape(shape).astype(dtype.newbyteorder("=")))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after last table")
    model = EmbeddingModel(
        kind=kind,
        dim=int(dim),
        entity_table=tables["entity"],
        relation_table=tables["relation"],
        projection_table=tables.get("projection"),
        norm=int(norm),
        masked=bool(flags & FLAG_MASKED),
    )
    return model, mask
