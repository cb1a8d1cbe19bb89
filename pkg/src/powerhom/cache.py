"""Append-only binary store of cell solutions.

Record layout (little-endian), format version 1::

    offset  type           field
    0       4s             tag: b"PHCS" (cell solution) or b"PHDS" (domain solution)
    4       uint16         format version
    6       uint8          dim
    7       uint8          microstructure kind (0 homogeneous, 1 layered, 2 dispersed)
    8       uint32         n, grid cells per axis
    12      float64[4]     p1, p2, sigma1, sigma2
    44      float64[4]     microstructure parameters
                             layered:   axis, a, b, 0
                             dispersed: radius, center (zero padded to 3)
                             homogeneous: 0, 0, 0, 0
    76      float64        solver tolerance
    84      uint32         Newton iterations
    88      float64[dim]   cell: macroscopic gradient xi;  domain: eps, load, 0...
    ...     float64[m]     nodal values in C (row-major) order; m = n**dim for
                           cell records, (n+1)**dim for domain records
    ...     float64[dim]   cell: b(xi);  domain: zeros
    ...     float64        residual norm

Readers skip records whose tag they do not handle.
"""
from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass

import numpy as np
from filelock import FileLock

from .constitutive import FluxLaw
from .microstructure import DISPERSED, HOMOGENEOUS, LAYERED, Microstructure

FORMAT_VERSION = 1
CELL_TAG = b"PHCS"
DOMAIN_TAG = b"PHDS"
_HEADER = struct.Struct("<4sHBBI4d4ddI")
_KINDS = {HOMOGENEOUS: 0, LAYERED: 1, DISPERSED: 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


def quantize(xi) -> tuple:
    return tuple(float(v) + 0.0 for v in np.round(np.asarray(xi, dtype=float), 12))


def _micro_params(m: Microstructure) -> list:
    if m.kind == LAYERED:
        return [float(m.axis), m.a, m.b, 0.0]
    if m.kind == DISPERSED:
        c = list(m.center) + [0.0] * (3 - len(m.center))
        return [m.radius] + c[:3]
    return [0.0] * 4


def _micro_from(kind: int, params, dim: int) -> Microstructure:
    name = _KIND_NAMES[kind]
    if name == LAYERED:
        return Microstructure.layered(params[1], params[2], axis=int(params[0]))
    if name == DISPERSED:
        return Microstructure.dispersed(params[1:1 + dim], params[0])
    return Microstructure.homogeneous()


@dataclass
class Record:
    tag: bytes
    law: FluxLaw
    micro: Microstructure
    dim: int
    n: int
    tol: float
    iterations: int
    head: np.ndarray
    values: np.ndarray
    tail: np.ndarray
    residual: float


def pack(rec: Record) -> bytes:
    header = _HEADER.pack(rec.tag, FORMAT_VERSION, rec.dim, _KINDS[rec.micro.kind], rec.n,
                          *rec.law.key(), *_micro_params(rec.micro), rec.tol, rec.iterations)
    body = np.concatenate([np.asarray(rec.head, "<f8").ravel(),
                           np.asarray(rec.values, "<f8").ravel(),
                           np.asarray(rec.tail, "<f8").ravel(),
                           np.array([rec.residual], "<f8")])
    return header + body.astype("<f8").tobytes()


def _value_count(tag: bytes, n: int, dim: int) -> int:
    return n ** dim if tag == CELL_TAG else (n + 1) ** dim


def unpack_all(data: bytes) -> list[Record]:
    out = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ValueError("truncated cache record header")
        tag, version, dim, kind, n, *rest = _HEADER.unpack_from(data, pos)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported cache format version {version}")
        law = FluxLaw(*rest[0:4])
        params = rest[4:8]
        tol, iterations = rest[8], rest[9]
        pos += _HEADER.size
        m = _value_count(tag, n, dim)
        count = dim + m + dim + 1
        body = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        out.append(Record(tag, law, _micro_from(kind, params, dim), dim, n, tol, iterations,
                          body[:dim], body[dim:dim + m], body[dim + m:dim + m + dim], body[-1]))
    return out


def write_records(path, records) -> None:
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(pack(rec))


def read_records(path) -> list[Record]:
    with open(path, "rb") as fh:
        return unpack_all(fh.read())


class CellCache:
    """Thread-safe in-memory map of cell solutions, optionally mirrored to disk.

    Keys are ``(law, micro, dim, n, tol, quantized xi)``.  A duplicate insert
    of an existing key is ignored; solutions are deterministic so both copies
    agree.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = None if path is None else os.fspath(path)
        self._mem: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.loaded = 0
        if self.path is not None:
            self._load()

    @staticmethod
    def make_key(law, micro, dim, n, tol, xi) -> tuple:
        return (law.key(), micro.key(), dim, n, float(tol), quantize(xi))

    def _file_lock(self):
        return FileLock(self.path + ".lock")

    def _load(self):
        if not os.path.exists(self.path):
            return
        with self._file_lock():
            records = read_records(self.path)
        for rec in records:
            if rec.tag != CELL_TAG:
                continue
            key = self.make_key(rec.law, rec.micro, rec.dim, rec.n, rec.tol, rec.head)
            self._mem[key] = rec
        self.loaded = len(self._mem)

    def get(self, key):
        with self._lock:
            rec = self._mem.get(key)
            if rec is None:
                self.misses += 1
            else:
                self.hits += 1
            return rec

    def put(self, key, rec: Record) -> None:
        with self._lock:
            if key in self._mem:
                return
            self._mem[key] = rec
        if self.path is not None:
            directory = os.path.dirname(os.path.abspath(self.path))
            os.makedirs(directory, exist_ok=True)
            with self._file_lock():
                with open(self.path, "ab") as fh:
                    fh.write(pack(rec))

    def __len__(self):
        return len(self._mem)

    def stats(self) -> dict:
        return {"entries": len(self._mem), "loaded": self.loaded,
                "hits": self.hits, "misses": self.misses}
