"""Lattice arithmetic on R^n with the coordinatewise order.

Join and meet are coordinatewise max/min, which are exact in floating
point. Only comparisons that involve a rounded convex combination or a
rounded difference need the order tolerance ``ORDER_TOL``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ORDER_TOL = 1e-9


class DimensionMismatch(ValueError):
    pass


class LatticeVector:
    """Immutable element of R^n ordered coordinatewise."""

    __slots__ = ("_c",)

    def __init__(self, coords: Iterable[float] | np.ndarray):
        c = np.array(coords, dtype=float).ravel()
        if c.size < 1:
            raise ValueError("a lattice vector needs at least one coordinate")
        if not np.all(np.isfinite(c)):
            raise ValueError(f"non-finite coordinate in {c!r}")
        c.setflags(write=False)
        self._c = c

    @classmethod
    def zeros(cls, n: int) -> "LatticeVector":
        return cls(np.zeros(n))

    @property
    def coords(self) -> np.ndarray:
        return self._c

    @property
    def dim(self) -> int:
        return self._c.size

    def __len__(self) -> int:
        return self._c.size

    def __iter__(self):
        return iter(self._c.tolist())

    def __getitem__(self, i):
        return self._c[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticeVector):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self) -> int:
        return hash(tuple(self._c.tolist()))

    def __repr__(self) -> str:
        return f"LatticeVector({self._c.tolist()!r})"

    def __add__(self, other: "LatticeVector") -> "LatticeVector":
        _check_dims(self, other)
        return LatticeVector(self._c + other._c)

    def __sub__(self, other: "LatticeVector") -> "LatticeVector":
        _check_dims(self, other)
        return LatticeVector(self._c - other._c)

    def __neg__(self) -> "LatticeVector":
        return LatticeVector(-self._c)

    def __mul__(self, alpha: float) -> "LatticeVector":
        return LatticeVector(float(alpha) * self._c)

    __rmul__ = __mul__

    def __or__(self, other: "LatticeVector") -> "LatticeVector":
        return join(self, other)

    def __and__(self, other: "LatticeVector") -> "LatticeVector":
        return meet(self, other)

    def to_json(self) -> list[float]:
        return self._c.tolist()

    def to_csv_row(self) -> str:
        return ",".join(repr(v) for v in self._c.tolist())

    @classmethod
    def from_csv_row(cls, row: str) -> "LatticeVector":
        return cls([float(v) for v in row.strip().split(",")])


def _check_dims(*vs: LatticeVector) -> None:
    n = vs[0].dim
    for v in vs[1:]:
        if v.dim != n:
            raise DimensionMismatch(f"dimension {v.dim} != {n}")


def as_vector(x) -> LatticeVector:
    return x if isinstance(x, LatticeVector) else LatticeVector(x)


def join(x: LatticeVector, y: LatticeVector) -> LatticeVector:
    """Least upper bound ``x v y``."""
    _check_dims(x, y)
    return LatticeVector(np.maximum(x.coords, y.coords))


def meet(x: LatticeVector, y: LatticeVector) -> LatticeVector:
    """Greatest lower bound ``x ^ y``."""
    _check_dims(x, y)
    return LatticeVector(np.minimum(x.coords, y.coords))


def abs_val(x: LatticeVector) -> LatticeVector:
    return LatticeVector(np.abs(x.coords))


def pos_part(x: LatticeVector) -> LatticeVector:
    """The truncation ``u(x) = x v 0``."""
    return LatticeVector(np.maximum(x.coords, 0.0))


def leq(x: LatticeVector, y: LatticeVector) -> bool:
    _check_dims(x, y)
    return bool(np.all(x.coords <= y.coords))


def in_cone(x: LatticeVector) -> bool:
    return bool(np.all(x.coords >= 0.0))


def check_distributive(x: LatticeVector, y: LatticeVector, z: LatticeVector) -> bool:
    """Both distributive laws, compared bitwise."""
    _check_dims(x, y, z)
    a = join(x, meet(y, z)) == meet(join(x, y), join(x, z))
    b = meet(x, join(y, z)) == join(meet(x, y), meet(x, z))
    return a and b


@dataclass(frozen=True)
class ChainReport:
    """Terms of the truncation sandwich

    ``u0 - |u1-u0| <= u0 ^ u1 <= u(x_t) <= u0 v u1 <= u0 + |u1-u0|``
    where ``u_i = u(x_i)`` and ``x_t = (1-t) x0 + t x1``.
    """

    lower2: LatticeVector
    lower1: LatticeVector
    mid: LatticeVector
    upper1: LatticeVector
    upper2: LatticeVector
    t: float
    holds: bool
    max_violation: float

    def to_json(self) -> dict:
        return {
            "lower2": self.lower2.to_json(),
            "lower1": self.lower1.to_json(),
            "mid": self.mid.to_json(),
            "upper1": self.upper1.to_json(),
            "upper2": self.upper2.to_json(),
            "t": self.t,
            "holds": self.holds,
            "max_violation": self.max_violation,
        }


def convex_combination(x0: LatticeVector, x1: LatticeVector, t: float) -> LatticeVector:
    _check_dims(x0, x1)
    return LatticeVector((1.0 - t) * x0.coords + t * x1.coords)


def chain_terms(x0: np.ndarray, x1: np.ndarray, t) -> tuple[np.ndarray, ...]:
    """Array kernel shared by `bound_chain` and the batch suite.

    Rows of ``x0``/``x1`` are vectors; ``t`` is a scalar or a column.
    """
    u0 = np.maximum(x0, 0.0)
    u1 = np.maximum(x1, 0.0)
    spread = np.abs(u1 - u0)
    mid = np.maximum((1.0 - t) * x0 + t * x1, 0.0)
    return (u0 - spread, np.minimum(u0, u1), mid, np.maximum(u0, u1), u0 + spread)


def chain_violation(terms: Sequence[np.ndarray]) -> np.ndarray:
    """Largest amount by which consecutive chain terms are out of order."""
    v = np.zeros(terms[0].shape[:-1])
    for lo, hi in zip(terms, terms[1:]):
        v = np.maximum(v, np.max(lo - hi, axis=-1))
    return v


def bound_chain(
    x0: LatticeVector, x1: LatticeVector, t: float, tol: float = ORDER_TOL
) -> ChainReport:
    _check_dims(x0, x1)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    terms = chain_terms(x0.coords, x1.coords, float(t))
    viol = float(chain_violation(terms))
    return ChainReport(
        *(LatticeVector(a) for a in terms), t=float(t), holds=viol <= tol, max_violation=viol
    )


def ulp_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-coordinate distance in units of the larger operand's ulp."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.spacing(np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) / scale


def _rows_equal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.all(a == b, axis=-1)


def lattice_suite(
    trials: int,
    seed: int,
    dims: Sequence[int] = tuple(range(1, 17)),
    scale: float = 1.0,
    tol: float = ORDER_TOL,
    near_zero: bool = False,
) -> dict:
    """Seeded property run over random triples, batched per dimension.

    Trial ``i`` uses dimension ``dims[i % len(dims)]``. With ``near_zero``
    coordinates are drawn at magnitude ~1e-12 and a fifth of them are set
    to exactly zero, which stresses the kink of the truncation.
    """
    rng = np.random.default_rng(seed)
    names = (
        "distributive", "commutative", "associative", "idempotent",
        "translation", "scaling", "chain", "abs_symmetric", "parts_sum",
    )
    failures = dict.fromkeys(names, 0)
    max_chain_violation = 0.0
    max_scaling_ulps = 0.0
    for k, n in enumerate(dims):
        m = len(range(k, trials, len(dims)))
        if m == 0:
            continue
        x, y, z = rng.normal(0.0, 1e-12 if near_zero else scale, size=(3, m, n))
        if near_zero:
            for a in (x, y, z):
                a[rng.random((m, n)) < 0.2] = 0.0
        t = rng.random((m, 1))
        alpha = rng.exponential(size=(m, 1))
        J, M = np.maximum, np.minimum

        ok = {
            "distributive": _rows_equal(J(x, M(y, z)), M(J(x, y), J(x, z)))
            & _rows_equal(M(x, J(y, z)), J(M(x, y), M(x, z))),
            "commutative": _rows_equal(J(x, y), J(y, x)) & _rows_equal(M(x, y), M(y, x)),
            "associative": _rows_equal(J(J(x, y), z), J(x, J(y, z)))
            & _rows_equal(M(M(x, y), z), M(x, M(y, z))),
            "idempotent": _rows_equal(J(x, x), x) & _rows_equal(M(x, x), x),
            "translation": _rows_equal(J(x + z, y + z), J(x, y) + z),
            "abs_symmetric": _rows_equal(np.abs(x), np.abs(-x)),
            "parts_sum": _rows_equal(J(x, 0.0) + J(-x, 0.0), np.abs(x)),
        }
        ulps = np.max(ulp_distance(J(alpha * x, alpha * y), alpha * J(x, y)), axis=-1)
        ok["scaling"] = ulps <= 4.0
        viol = chain_violation(chain_terms(x, y, t))
        ok["chain"] = viol <= tol
        max_scaling_ulps = max(max_scaling_ulps, float(ulps.max()))
        max_chain_violation = max(max_chain_violation, float(viol.max()))
        for name in names:
            failures[name] += int(np.count_nonzero(~ok[name]))
    return {
        "trials": trials,
        "dims": [int(d) for d in dims],
        "failures": failures,
        "max_chain_violation": max(max_chain_violation, 0.0),
        "max_scaling_ulps": max_scaling_ulps,
        "passed": not any(failures.values()),
    }
