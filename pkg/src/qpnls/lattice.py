"""Sparse real coefficient fields on Z^4 and their convolution algebra.

A lattice index is ``k = (n1, n2, j1, j2)``: two time modes followed by two
space modes.  Fields are stored as lexicographically sorted coordinate arrays
so that iteration order, and therefore every downstream computation, is
reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import DegenerateFit

#: entries with smaller magnitude are dropped after arithmetic
PRUNE = 1e-300

# Packed keys: each coordinate is shifted into [0, 2**15) and stored in a
# 15-bit digit.  Packing is monotone in lexicographic order and additive, so
# support sums reduce to integer additions.
_BITS = 15
_SHIFT = 1 << (_BITS - 1)
_BASE = 1 << _BITS
_WEIGHTS = np.array([_BASE**3, _BASE**2, _BASE, 1], dtype=np.int64)
_OFFSET = int(_SHIFT * _WEIGHTS.sum())
MAX_COORD = _SHIFT // 2 - 1

_CONV_CHUNK = 4_000_000


def pack(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 4)
    if keys.size and np.abs(keys).max() > MAX_COORD:
        raise OverflowError(f"lattice coordinate exceeds {MAX_COORD}")
    return (keys + _SHIFT) @ _WEIGHTS


def unpack(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.int64)
    out = np.empty((packed.size, 4), dtype=np.int64)
    rest = packed.copy()
    for col in range(3, -1, -1):
        out[:, col] = rest % _BASE - _SHIFT
        rest //= _BASE
    return out


def sup_norm(keys: np.ndarray) -> np.ndarray:
    """|k|_inf row by row."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 4)
    if keys.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.abs(keys).max(axis=1)


def _aggregate(packed: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(packed, return_inverse=True)
    summed = np.bincount(inverse, weights=values, minlength=uniq.size)
    keep = np.abs(summed) >= PRUNE
    return uniq[keep], summed[keep]


class CoeffField:
    """Finitely supported real function on Z^4.

    Construct from a mapping ``{(n1, n2, j1, j2): value}`` or from coordinate
    and value arrays.  Duplicate indices are summed and entries below
    :data:`PRUNE` are removed.
    """

    __slots__ = ("_packed", "_values", "_keys")

    def __init__(self, entries: Mapping | None = None, *, keys=None, values=None):
        if entries is not None:
            items = list(entries.items())
            keys = np.array([k for k, _ in items], dtype=np.int64).reshape(-1, 4)
            values = np.array([v for _, v in items], dtype=float)
        if keys is None:
            keys = np.zeros((0, 4), dtype=np.int64)
            values = np.zeros(0)
        values = np.asarray(values, dtype=float).reshape(-1)
        packed = pack(keys)
        if packed.size != values.size:
            raise ValueError("keys and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("coefficient values must be finite")
        self._packed, self._values = _aggregate(packed, values)
        self._keys = None

    @classmethod
    def _from_packed(cls, packed, values) -> "CoeffField":
        obj = cls.__new__(cls)
        obj._packed, obj._values = _aggregate(packed, values)
        obj._keys = None
        return obj

    @classmethod
    def delta(cls, k=(0, 0, 0, 0), value: float = 1.0) -> "CoeffField":
        return cls({tuple(k): value})

    @property
    def keys(self) -> np.ndarray:
        if self._keys is None:
            self._keys = unpack(self._packed)
        return self._keys

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def __len__(self) -> int:
        return self._values.size

    def __bool__(self) -> bool:
        return self._values.size > 0

    def items(self) -> Iterator[tuple[tuple[int, int, int, int], float]]:
        for k, v in zip(self.keys.tolist(), self._values.tolist()):
            yield tuple(k), v

    def to_dict(self) -> dict:
        return dict(self.items())

    def __getitem__(self, k) -> float:
        key = pack(np.asarray(k).reshape(1, 4))[0]
        pos = np.searchsorted(self._packed, key)
        if pos < self._packed.size and self._packed[pos] == key:
            return float(self._values[pos])
        return 0.0

    def get_many(self, keys) -> np.ndarray:
        """Values at an array of indices (zero off the support)."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 4)
        packed = pack(keys)
        out = np.zeros(len(packed))
        if not self._packed.size:
            return out
        pos = np.minimum(np.searchsorted(self._packed, packed), self._packed.size - 1)
        hit = self._packed[pos] == packed
        out[hit] = self._values[pos[hit]]
        return out

    def __add__(self, other: "CoeffField") -> "CoeffField":
        return CoeffField._from_packed(
            np.concatenate([self._packed, other._packed]),
            np.concatenate([self._values, other._values]),
        )

    def __sub__(self, other: "CoeffField") -> "CoeffField":
        return self + other.scale(-1.0)

    def __neg__(self) -> "CoeffField":
        return self.scale(-1.0)

    def scale(self, c: float) -> "CoeffField":
        return CoeffField._from_packed(self._packed.copy(), self._values * float(c))

    def __mul__(self, c: float) -> "CoeffField":
        return self.scale(c)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoeffField):
            return NotImplemented
        return np.array_equal(self._packed, other._packed) and np.array_equal(
            self._values, other._values
        )

    __hash__ = None

    def norm(self, ord=2) -> float:
        if not len(self):
            return 0.0
        return float(np.linalg.norm(self._values, ord))

    def restrict(self, radius: int) -> "CoeffField":
        """Entries with |k|_inf <= radius."""
        keep = sup_norm(self.keys) <= radius
        return CoeffField._from_packed(self._packed[keep], self._values[keep])

    def drop(self, sites: Iterable) -> "CoeffField":
        sites = np.array(list(sites), dtype=np.int64).reshape(-1, 4)
        keep = ~np.isin(self._packed, pack(sites))
        return CoeffField._from_packed(self._packed[keep], self._values[keep])

    def allclose(self, other: "CoeffField", rtol=1e-12, atol=0.0) -> bool:
        diff = self - other
        scale = max(self.norm(np.inf), other.norm(np.inf))
        return diff.norm(np.inf) <= atol + rtol * scale

    def __repr__(self) -> str:
        head = ", ".join(f"{k}: {v:.6g}" for k, v in list(self.items())[:4])
        more = ", ..." if len(self) > 4 else ""
        return f"CoeffField({{{head}{more}}}, size={len(self)})"


@dataclass(frozen=True)
class SectorField:
    """The (u, v) pair: ``plus`` is u, ``minus`` is v = reflected u."""

    plus: CoeffField
    minus: CoeffField

    @classmethod
    def from_plus(cls, u: CoeffField) -> "SectorField":
        return cls(u, reflect_conjugate(u))

    def is_conjugate(self) -> bool:
        return reflect_conjugate(self.plus) == self.minus

    def support_radius(self) -> int:
        return max(support_radius(self.plus), support_radius(self.minus))


def reflect_conjugate(u: CoeffField) -> CoeffField:
    """k -> -k.  For real coefficients conjugation is a pure reflection."""
    return CoeffField._from_packed(2 * _OFFSET - u.packed, u.values)


def convolve(a: CoeffField, b: CoeffField) -> CoeffField:
    """Direct sparse convolution sum_{k'} a(k') b(k - k')."""
    if not len(a) or not len(b):
        return CoeffField()
    if len(a) < len(b):
        a, b = b, a
    reach = support_radius(a) + support_radius(b)
    if reach > MAX_COORD:
        raise OverflowError("convolution support exceeds the packed key range")
    rows = max(1, _CONV_CHUNK // len(b))
    packed_parts, value_parts = [], []
    for start in range(0, len(a), rows):
        pa = a.packed[start : start + rows]
        va = a.values[start : start + rows]
        packed_parts.append((pa[:, None] + b.packed[None, :] - _OFFSET).ravel())
        value_parts.append((va[:, None] * b.values[None, :]).ravel())
    return CoeffField._from_packed(np.concatenate(packed_parts), np.concatenate(value_parts))


def power(w: CoeffField, p: int) -> CoeffField:
    """p-fold convolution power; p = 0 gives the unit mass at the origin."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    out = CoeffField.delta()
    for _ in range(p):
        out = convolve(out, w)
    return out


def nonlinear_term(u: CoeffField, v: CoeffField, p: int) -> CoeffField:
    """(u*v)^{*p} * u."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return convolve(power(convolve(u, v), p), u)


def support_radius(u: CoeffField) -> int:
    if not len(u):
        return 0
    return int(sup_norm(u.keys).max())


def decay_fit(u: CoeffField) -> tuple[float, float, float]:
    """Least-squares fit of log|u(k)| = c0 - alpha |k|_inf.

    Returns ``(alpha, c0, residual)`` where ``residual`` is the RMS deviation
    of the fit in log scale.
    """
    if not len(u):
        raise DegenerateFit("empty field")
    r = sup_norm(u.keys).astype(float)
    if np.unique(r).size < 2:
        raise DegenerateFit("all support points lie on a single sup-norm shell")
    y = np.log(np.abs(u.values))
    design = np.column_stack([np.ones_like(r), -r])
    (c0, alpha), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ np.array([c0, alpha]) - y) ** 2)))
    return float(alpha), float(c0), resid


def field_to_json(u: CoeffField, sector: str = "plus", box_radius: int | None = None) -> dict:
    """Documented record form: ``entries`` is a list of [n1, n2, j1, j2, value]."""
    return {
        "sector": sector,
        "box_radius": support_radius(u) if box_radius is None else int(box_radius),
        "size": len(u),
        "entries": [[*k, v] for k, v in u.items()],
    }


def field_from_json(obj: dict) -> CoeffField:
    entries = obj["entries"]
    if not isinstance(entries, list):
        raise ValueError("entries must be a list of records")
    keys, values = [], []
    for rec in entries:
        if len(rec) != 5:
            raise ValueError(f"malformed coefficient record {rec!r}")
        k = rec[:4]
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in k):
            raise ValueError(f"non-integer lattice index in record {rec!r}")
        keys.append(k)
        values.append(float(rec[4]))
    return CoeffField(keys=np.array(keys, dtype=np.int64).reshape(-1, 4), values=values)


def dumps_field(u: CoeffField, sector: str = "plus") -> str:
    return json.dumps(field_to_json(u, sector))


def seed_field(h1, h2, a1: float, a2: float) -> CoeffField:
    """Linear seed u0 = a1 d_(-e1, h1) + a2 d_(-e2, h2)."""
    k1 = (-1, 0, int(h1[0]), int(h1[1]))
    k2 = (0, -1, int(h2[0]), int(h2[1]))
    return CoeffField(keys=[k1, k2], values=[a1, a2])


def resonant_sites(h1, h2) -> list[tuple[str, tuple[int, int, int, int]]]:
    """The four sites carrying the seed amplitudes, sector-wise."""
    k1 = (-1, 0, int(h1[0]), int(h1[1]))
    k2 = (0, -1, int(h2[0]), int(h2[1]))
    neg = lambda k: tuple(-c for c in k)  # noqa: E731
    return [("+", k1), ("+", k2), ("-", neg(k1)), ("-", neg(k2))]
