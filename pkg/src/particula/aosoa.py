"""Tuple-of-fields particle container with Array-of-Structs-of-Arrays storage.

A ParticleSet stores every field of a particle tuple in one flat byte
buffer arranged struct by struct: each struct holds, for every field, a
contiguous block of `vector_length` lanes. Logical particle index i maps
to (struct, lane) = (i // V, i % V). V = 1 degenerates to AoS, V >=
capacity to SoA.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_KINDS = {"float64": np.float64, "int64": np.int64}
_ITEMSIZE = 8


@dataclass(frozen=True)
class FieldSchema:
    """Ordered (name, scalar kind, tensor extent) entries describing one tuple."""

    entries: tuple

    def __post_init__(self):
        entries = []
        names = set()
        for name, kind, extent in self.entries:
            if kind not in _KINDS:
                raise ValueError(f"unsupported scalar kind: {kind!r}")
            if name in names:
                raise ValueError(f"duplicate field name: {name!r}")
            extent = tuple(int(e) for e in extent)
            if any(e < 1 for e in extent):
                raise ValueError(f"field {name!r} has a dimension < 1")
            names.add(name)
            entries.append((str(name), kind, extent))
        object.__setattr__(self, "entries", tuple(entries))

    def names(self):
        return [e[0] for e in self.entries]

    def entry(self, name: str):
        for e in self.entries:
            if e[0] == name:
                return e
        raise KeyError(f"unknown field: {name!r}")

    def dtype(self, name: str):
        return _KINDS[self.entry(name)[1]]

    def extent(self, name: str):
        return self.entry(name)[2]


def schema(**fields) -> FieldSchema:
    """Shorthand: schema(x=("float64", (3,)), id=("int64", ()))."""
    return FieldSchema(tuple((n, k, ext) for n, (k, ext) in fields.items()))


class FieldView:
    """Aliasing accessor for one field of a ParticleSet.

    Element (i, *components) lives at byte offset
    struct_stride * (i // V) + byte_offset + (flat(components) * V + i % V) * 8.
    """

    def __init__(self, pset: "ParticleSet", name: str):
        self._pset = pset
        self.name = name
        self.dtype = pset.schema.dtype(name)
        self.extent = pset.schema.extent(name)
        self.byte_offset = pset._field_offsets[name]
        self.struct_stride = pset._struct_bytes
        self.lane_stride = _ITEMSIZE
        V = pset.vector_length
        strides = [self.struct_stride]
        sub = _ITEMSIZE * V
        for e in reversed(self.extent):
            strides.insert(1, sub)
            sub *= e
        strides.append(_ITEMSIZE)
        shape = (pset.num_structs, *self.extent, V)
        if pset.num_structs == 0:
            self._a = np.empty(shape, dtype=self.dtype)
        else:
            self._a = np.ndarray(
                shape=shape,
                dtype=self.dtype,
                buffer=pset._buffer,
                offset=self.byte_offset,
                strides=tuple(strides),
            )

    @property
    def size(self) -> int:
        return self._pset.size

    def _locate(self, i: int):
        n = self._pset.size
        if not 0 <= i < n:
            raise IndexError(f"particle index {i} out of range [0, {n})")
        return divmod(i, self._pset.vector_length)

    def __getitem__(self, i):
        if isinstance(i, tuple):
            i, *comps = i
            s, a = self._locate(i)
            return self._a[(s, *comps, a)]
        s, a = self._locate(i)
        return self._a[s][..., a]

    def __setitem__(self, i, value):
        if isinstance(i, tuple):
            i, *comps = i
            s, a = self._locate(i)
            self._a[(s, *comps, a)] = value
            return
        s, a = self._locate(i)
        self._a[s][..., a] = value

    def copy_out(self) -> np.ndarray:
        """Dense (n, *extent) copy in logical particle order."""
        n = self._pset.size
        lanes = np.moveaxis(self._a, -1, 1)  # (S, V, *extent) view
        flat = lanes.reshape(-1, *self.extent) if lanes.size else lanes.reshape(0, *self.extent)
        return flat[:n].copy()

    def copy_in(self, values: np.ndarray) -> None:
        """Overwrite all n particles from a dense (n, *extent) array."""
        n = self._pset.size
        values = np.asarray(values, dtype=self.dtype)
        if values.shape != (n, *self.extent):
            raise ValueError(f"expected shape {(n, *self.extent)}, got {values.shape}")
        cap = self._pset.capacity
        padded = np.zeros((cap, *self.extent), dtype=self.dtype)
        padded[:n] = values
        V = self._pset.vector_length
        lanes = np.moveaxis(self._a, -1, 1)
        lanes[...] = padded.reshape(self._pset.num_structs, V, *self.extent)


class ParticleSet:
    """AoSoA particle container; see module docstring for the index map."""

    def __init__(self, schema: FieldSchema, vector_length: int, size: int):
        if vector_length < 1:
            raise ValueError(f"vector_length must be >= 1, got {vector_length}")
        if size < 0:
            raise ValueError(f"size must be >= 0, got {size}")
        self.schema = schema
        self.vector_length = int(vector_length)
        self._size = int(size)
        self.ghosts = 0  # maintained by decomp; owned = size - ghosts
        offsets = {}
        off = 0
        for name, kind, extent in schema.entries:
            offsets[name] = off
            off += _ITEMSIZE * math.prod(extent) * self.vector_length
        self._field_offsets = offsets
        self._struct_bytes = off
        self._alloc(self._size)

    def _alloc(self, size: int):
        structs = -(-size // self.vector_length) if size else 0
        self.num_structs = structs
        self._buffer = np.zeros(structs * self._struct_bytes, dtype=np.uint8)

    @property
    def size(self) -> int:
        return self._size

    @property
    def owned(self) -> int:
        return self._size - self.ghosts

    @property
    def capacity(self) -> int:
        return self.num_structs * self.vector_length

    def slice(self, name: str) -> FieldView:
        self.schema.entry(name)  # raises on unknown field
        return FieldView(self, name)

    def resize(self, new_size: int) -> None:
        """Grow or shrink, preserving surviving particles; new slots are zero."""
        if new_size < 0:
            raise ValueError("size must be >= 0")
        old = {name: self.slice(name).copy_out() for name in self.schema.names()}
        keep = min(self._size, new_size)
        self._size = new_size
        self._alloc(new_size)
        for name in self.schema.names():
            view = self.slice(name)
            fresh = np.zeros((new_size, *view.extent), dtype=view.dtype)
            fresh[:keep] = old[name][:keep]
            view.copy_in(fresh)

    def locate(self, i: int):
        """Logical index -> (struct, lane)."""
        return divmod(i, self.vector_length)


def create(schema: FieldSchema, vector_length: int, size: int) -> ParticleSet:
    return ParticleSet(schema, vector_length, size)


def deep_copy(dst: ParticleSet, src: ParticleSet) -> None:
    """Elementwise copy between sets of identical schema and size; V may differ."""
    if dst.schema != src.schema:
        raise ValueError("schema mismatch")
    if dst.size != src.size:
        raise ValueError(f"size mismatch: {dst.size} != {src.size}")
    if dst is src:
        return
    for name in src.schema.names():
        dst.slice(name).copy_in(src.slice(name).copy_out())


def simd_for_each(pset: ParticleSet, begin: int, end: int, kernel) -> None:
    """Invoke kernel(struct, lane) once per logical index in [begin, end).

    Sequential, ascending logical order; padding lanes are never visited.
    """
    if not 0 <= begin <= end <= pset.size:
        raise IndexError(f"range [{begin}, {end}) outside [0, {pset.size})")
    V = pset.vector_length
    for i in range(begin, end):
        kernel(i // V, i % V)
