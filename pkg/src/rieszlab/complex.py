"""Simplicial complexes, Vietoris-Rips construction and homology.

Z/2 ranks come from the left-to-right column reduction with lowest-one
pivots, columns stored as Python integers used as bitsets. Integer
homology uses a Smith normal form that first strips unit pivots, which
is where nearly all of a boundary matrix's invariant factors live.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

Ring = Literal["Z/2", "Z"]
Simplex = tuple[int, ...]


class SimplicialComplex:
    """Downward-closed family of sorted vertex tuples, grouped by dimension."""

    def __init__(self, vertex_count: int, simplices: Sequence[Iterable[Simplex]]):
        self.vertex_count = int(vertex_count)
        self.simplices: list[list[Simplex]] = [sorted(set(map(tuple, s))) for s in simplices]
        while len(self.simplices) > 1 and not self.simplices[-1]:
            self.simplices.pop()
        self._index: list[dict[Simplex, int]] | None = None

    @classmethod
    def from_maximal(cls, faces: Iterable[Sequence[int]], vertex_count: int | None = None) -> "SimplicialComplex":
        by_dim: dict[int, set[Simplex]] = {}
        top = 0
        for f in faces:
            f = tuple(sorted(set(f)))
            top = max(top, len(f) - 1)
            for k in range(1, len(f) + 1):
                by_dim.setdefault(k - 1, set()).update(itertools.combinations(f, k))
        verts = {v for (v,) in by_dim.get(0, ())}
        n = vertex_count if vertex_count is not None else (max(verts) + 1 if verts else 0)
        by_dim.setdefault(0, set()).update((v,) for v in range(n))
        return cls(n, [by_dim.get(k, set()) for k in range(top + 1)])

    @classmethod
    def full_simplex(cls, n_vertices: int) -> "SimplicialComplex":
        return cls.from_maximal([range(n_vertices)])

    @classmethod
    def simplex_boundary(cls, n_vertices: int) -> "SimplicialComplex":
        """Boundary of the (n_vertices-1)-simplex, a sphere."""
        return cls.from_maximal(itertools.combinations(range(n_vertices), n_vertices - 1))

    @property
    def dim(self) -> int:
        return len(self.simplices) - 1

    def count(self, k: int) -> int:
        return len(self.simplices[k]) if 0 <= k <= self.dim else 0

    def counts(self) -> list[int]:
        return [len(s) for s in self.simplices]

    def __len__(self) -> int:
        return sum(self.counts())

    def index(self, k: int) -> dict[Simplex, int]:
        if self._index is None:
            self._index = [{s: i for i, s in enumerate(level)} for level in self.simplices]
        return self._index[k]

    def all_simplices(self) -> list[Simplex]:
        return [s for level in self.simplices for s in level]

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * c for k, c in enumerate(self.counts()))

    def validate(self) -> None:
        for k, level in enumerate(self.simplices):
            for s in level:
                if len(s) != k + 1 or any(a >= b for a, b in zip(s, s[1:])):
                    raise ValueError(f"simplex {s} is not a strictly increasing {k}-simplex")
                if s[0] < 0 or s[-1] >= self.vertex_count:
                    raise ValueError(f"simplex {s} has a vertex out of range")
                if k > 0:
                    idx = self.index(k - 1)
                    for face in itertools.combinations(s, k):
                        if face not in idx:
                            raise ValueError(f"face {face} of {s} is missing")

    def is_subcomplex_of(self, other: "SimplicialComplex") -> bool:
        return all(
            k <= other.dim and set(level) <= set(other.simplices[k])
            for k, level in enumerate(self.simplices)
        )


@dataclass
class GeometricComplex:
    complex: SimplicialComplex
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] != self.complex.vertex_count:
            raise ValueError("every vertex needs a position")

    def realize(self, simplex: Simplex, bary: np.ndarray) -> np.ndarray:
        return np.asarray(bary) @ self.positions[list(simplex)]


@dataclass
class HomologyProfile:
    betti: list[int]
    coefficient_ring: Ring = "Z/2"
    torsion: list[list[int]] = field(default_factory=list)

    def reduced(self) -> list[int]:
        if not self.betti:
            return []
        return [max(self.betti[0] - 1, 0)] + self.betti[1:]

    def to_json(self) -> dict:
        return {"betti": list(self.betti), "coefficient_ring": self.coefficient_ring,
                "torsion": [list(t) for t in self.torsion]}


# --- construction ---------------------------------------------------------

def rips_graph(points: np.ndarray, radius: float) -> list[int]:
    """Closed neighbourhoods as bitsets: bit j of entry i set iff |p_i - p_j| <= radius."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nbr = [1 << i for i in range(len(pts))]
    for i, j in cKDTree(pts).query_pairs(radius, output_type="ndarray"):
        nbr[i] |= 1 << int(j)
        nbr[j] |= 1 << int(i)
    return nbr


def _bits(x: int) -> list[int]:
    out = []
    while x:
        low = x & -x
        out.append(low.bit_length() - 1)
        x ^= low
    return out


def clique_complex(neighbors: Sequence[int], max_dim: int, vertices: Sequence[int] | None = None) -> SimplicialComplex:
    """Flag complex of a graph given as closed-neighbourhood bitsets.

    Only ``vertices`` (default all) are used and they are relabelled
    0..len(vertices)-1 in the given order.
    """
    verts = list(range(len(neighbors))) if vertices is None else list(vertices)
    relabel = {v: i for i, v in enumerate(verts)}
    keep = 0
    for v in verts:
        keep |= 1 << v
    # strictly-greater neighbours in the new labelling, as bitsets over new labels
    up = []
    for v in verts:
        mask = 0
        for w in _bits(neighbors[v] & keep):
            if relabel[w] > relabel[v]:
                mask |= 1 << relabel[w]
        up.append(mask)
    levels: list[list[Simplex]] = [[(i,) for i in range(len(verts))]]
    frontier = [((i,), up[i]) for i in range(len(verts))]
    for _ in range(max_dim):
        nxt = []
        simplices = []
        for s, cand in frontier:
            for w in _bits(cand):
                t = s + (w,)
                simplices.append(t)
                nxt.append((t, cand & up[w]))
        if not simplices:
            break
        levels.append(simplices)
        frontier = nxt
    return SimplicialComplex(len(verts), levels)


def vietoris_rips(cloud, radius: float, max_dim: int | None = None) -> SimplicialComplex:
    """Rips complex: simplices are point sets of pairwise Euclidean distance <= radius."""
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    if pts.size == 0:
        raise ValueError("cannot build a Rips complex on an empty cloud")
    pts = np.atleast_2d(pts)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_dim is None:
        max_dim = pts.shape[1]
    if max_dim < 0:
        raise ValueError("max_dim must be nonnegative")
    return clique_complex(rips_graph(pts, radius), max_dim)


def collapse_dominated(neighbors: Sequence[int], edges: bool = True) -> tuple[list[int], list[int]]:
    """Strong-collapse a graph's flag complex; returns (kept vertices, neighbourhoods).

    A vertex v is dominated by a neighbour w when N[v] is contained in N[w]
    (closed neighbourhoods); an edge uv is dominated by w when
    N[u] & N[v] is contained in N[w]. Deleting a dominated vertex or edge
    is a collapse of the flag complex, so the homotopy type is unchanged.
    The returned neighbourhoods describe the collapsed graph.
    """
    nbr = list(neighbors)
    alive = set(range(len(nbr)))

    def vertex_pass() -> bool:
        hit = False
        for v in sorted(alive):
            nv = nbr[v]
            for w in _bits(nv & ~(1 << v)):
                if nv & ~nbr[w] == 0:
                    alive.discard(v)
                    for x in _bits(nv & ~(1 << v)):
                        nbr[x] &= ~(1 << v)
                    nbr[v] = 1 << v
                    hit = True
                    break
        return hit

    def edge_pass() -> bool:
        hit = False
        for u in sorted(alive):
            for v in _bits(nbr[u] >> (u + 1)):
                v += u + 1
                common = nbr[u] & nbr[v]
                for w in _bits(common & ~(1 << u) & ~(1 << v)):
                    if common & ~nbr[w] == 0:
                        nbr[u] &= ~(1 << v)
                        nbr[v] &= ~(1 << u)
                        hit = True
                        break
        return hit

    while True:
        changed = vertex_pass()
        if edges:
            changed = edge_pass() or changed
        if not changed:
            break
    return sorted(alive), nbr


def rips_radius(points: np.ndarray, coeff: float = 2.0, k: int = 5) -> float:
    """Density-adaptive scale: ``coeff`` times the mean distance to the k-th neighbour."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kk = min(k, len(pts) - 1)
    if kk < 1:
        return 1.0
    d, _ = cKDTree(pts).query(pts, k=kk + 1)
    return float(coeff * d[:, kk].mean())


def connectivity_radius(points: np.ndarray) -> float:
    """Longest edge of a Euclidean minimum spanning tree: the smallest connected Rips scale."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        return 0.0
    # duplicates have distance 0, which csgraph reads as "no edge"; nudge them
    d = np.maximum(squareform(pdist(pts)), 1e-300)
    np.fill_diagonal(d, 0.0)
    return float(minimum_spanning_tree(d).max())


def triangulate_circle(m: int) -> GeometricComplex:
    if m < 3:
        raise ValueError("a circle needs at least 3 vertices")
    ang = 2 * np.pi * np.arange(m) / m
    K = SimplicialComplex.from_maximal([tuple(sorted((i, (i + 1) % m))) for i in range(m)])
    return GeometricComplex(K, np.column_stack([np.cos(ang), np.sin(ang)]))


def subdivide(G: GeometricComplex) -> GeometricComplex:
    """Barycentric subdivision.

    Original vertices keep their labels; the barycenter of every simplex of
    dimension >= 1 becomes a new vertex. New simplices are chains of
    strictly nested faces.
    """
    K = G.complex
    label: dict[Simplex, int] = {(v,): v for v in range(K.vertex_count)}
    pos = [p for p in G.positions]
    for level in K.simplices[1:]:
        for s in level:
            label[s] = len(pos)
            pos.append(G.positions[list(s)].mean(axis=0))
    chains: dict[Simplex, list[tuple[int, ...]]] = {}
    faces: list[set[Simplex]] = [set() for _ in range(K.dim + 1)]
    for k, level in enumerate(K.simplices):
        for s in level:
            own = [(label[s],)]
            for j in range(1, k + 1):
                for f in itertools.combinations(s, j):
                    own.extend(c + (label[s],) for c in chains[f])
            chains[s] = own
            for c in own:
                faces[len(c) - 1].add(tuple(sorted(c)))
    # every sub-chain of a chain is a chain, so the family is already closed
    return GeometricComplex(SimplicialComplex(len(pos), faces), np.array(pos))


def mesh(G: GeometricComplex) -> float:
    best = 0.0
    for level in G.complex.simplices[1:]:
        for s in level:
            P = G.positions[list(s)]
            d = np.max(np.linalg.norm(P[:, None] - P[None], axis=-1))
            best = max(best, float(d))
    return best


# --- boundary operators and homology ---------------------------------------

def boundary(K: SimplicialComplex, k: int, signed: bool = False) -> sparse.csc_matrix:
    """Boundary matrix from k-simplices to (k-1)-simplices (mod 2 unless ``signed``)."""
    if not 1 <= k <= K.dim:
        raise ValueError(f"boundary dimension {k} outside 1..{K.dim}")
    idx = K.index(k - 1)
    rows, cols, vals = [], [], []
    for j, s in enumerate(K.simplices[k]):
        for i in range(k + 1):
            rows.append(idx[s[:i] + s[i + 1:]])
            cols.append(j)
            vals.append((-1) ** i if signed else 1)
    shape = (K.count(k - 1), K.count(k))
    dtype = np.int64 if signed else np.uint8
    return sparse.csc_matrix((np.array(vals, dtype=dtype), (rows, cols)), shape=shape)


def _boundary_columns(K: SimplicialComplex, k: int) -> list[int]:
    idx = K.index(k - 1)
    cols = []
    for s in K.simplices[k]:
        c = 0
        for i in range(k + 1):
            c ^= 1 << idx[s[:i] + s[i + 1:]]
        cols.append(c)
    return cols


def reduce_columns(cols: list[int], cleared: set[int] = frozenset()) -> tuple[int, set[int]]:
    """Standard reduction over Z/2; returns the rank and the set of pivot rows."""
    pivot_of: dict[int, int] = {}
    for j, c in enumerate(cols):
        if j in cleared:
            continue
        while c:
            low = c.bit_length() - 1
            other = pivot_of.get(low)
            if other is None:
                pivot_of[low] = c
                break
            c ^= other
    return len(pivot_of), set(pivot_of)


def z2_ranks(K: SimplicialComplex) -> list[int]:
    """rank of each boundary map d_k, k = 0..dim (d_0 = 0), with clearing."""
    ranks = [0] * (K.dim + 2)
    cleared: set[int] = set()
    for k in range(K.dim, 0, -1):
        r, pivots = reduce_columns(_boundary_columns(K, k), cleared)
        ranks[k] = r
        # a k-1 simplex that is a pivot row of d_k has a zero reduced column in d_{k-1}
        cleared = pivots
    return ranks


def _smith_invariants_dense(rows: list[list[int]]) -> list[int]:
    """Nonzero invariant factors of a small dense integer matrix."""
    A = [r[:] for r in rows]
    m = len(A)
    n = len(A[0]) if m else 0
    out = []
    t = 0
    while t < min(m, n):
        nz = [(abs(A[i][j]), i, j) for i in range(t, m) for j in range(t, n) if A[i][j]]
        if not nz:
            break
        _, pi, pj = min(nz)
        A[t], A[pi] = A[pi], A[t]
        for r in A:
            r[t], r[pj] = r[pj], r[t]
        while True:
            p = A[t][t]
            done = True
            for i in range(t + 1, m):
                q = A[i][t] // p
                if q:
                    A[i] = [a - q * b for a, b in zip(A[i], A[t])]
                if A[i][t]:
                    done = False
            for j in range(t + 1, n):
                q = A[t][j] // p
                if q:
                    for r in A:
                        r[j] -= q * r[t]
                if A[t][j]:
                    done = False
            if done:
                # divisibility: fold a non-multiple entry into the pivot row
                bad = next(((i, j) for i in range(t + 1, m) for j in range(t + 1, n) if A[i][j] % p), None)
                if bad is None:
                    break
                A[t] = [a + b for a, b in zip(A[t], A[bad[0]])]
                continue
            # move the smallest remaining entry of row/column t to the pivot
            cand = [(abs(A[i][t]), i, t) for i in range(t, m) if A[i][t]]
            cand += [(abs(A[t][j]), t, j) for j in range(t, n) if A[t][j]]
            _, pi, pj = min(cand)
            A[t], A[pi] = A[pi], A[t]
            for r in A:
                r[t], r[pj] = r[pj], r[t]
        out.append(abs(A[t][t]))
        t += 1
    return out


def smith_invariants(M) -> list[int]:
    """Nonzero invariant factors (diagonal of the Smith form) of an integer matrix."""
    M = sparse.coo_matrix(M)
    rows: dict[int, dict[int, int]] = {}
    for i, j, v in zip(M.row.tolist(), M.col.tolist(), M.data.tolist()):
        if v:
            rows.setdefault(i, {})[j] = rows.get(i, {}).get(j, 0) + int(v)
    cols: dict[int, set[int]] = {}
    for i, r in rows.items():
        for j in r:
            cols.setdefault(j, set()).add(i)
    units = 0
    while True:
        piv = None
        # prefer the sparsest row holding a unit entry to limit fill-in
        for i in sorted(rows, key=lambda i: len(rows[i])):
            for j, v in rows[i].items():
                if v in (1, -1):
                    piv = (i, j, v)
                    break
            if piv:
                break
        if piv is None:
            break
        i, j, v = piv
        prow = rows.pop(i)
        for k in prow:
            cols[k].discard(i)
        for r in list(cols.get(j, ())):
            row = rows[r]
            f = row[j] * v
            for k, a in prow.items():
                nv = row.get(k, 0) - f * a
                if nv:
                    if k not in row:
                        cols.setdefault(k, set()).add(r)
                    row[k] = nv
                else:
                    row.pop(k, None)
                    cols[k].discard(r)
            if not row:
                del rows[r]
        cols.pop(j, None)
        units += 1
    if not rows:
        return [1] * units
    rest_cols = sorted({k for r in rows.values() for k in r})
    cpos = {k: n for n, k in enumerate(rest_cols)}
    dense = []
    for r in rows.values():
        line = [0] * len(rest_cols)
        for k, a in r.items():
            line[cpos[k]] = a
        dense.append(line)
    return [1] * units + _smith_invariants_dense(dense)


def betti(K: SimplicialComplex, ring: Ring = "Z/2", max_dim: int | None = None) -> HomologyProfile:
    """Betti numbers b_0..b_max_dim (default: the complex's dimension).

    Over Z the torsion coefficients of H_k (invariant factors > 1 of d_{k+1})
    are recorded per dimension.
    """
    top = K.dim if max_dim is None else min(max_dim, K.dim)
    counts = K.counts()
    if ring == "Z/2":
        ranks = z2_ranks(K)
        torsion: list[list[int]] = []
    elif ring == "Z":
        ranks = [0] * (K.dim + 2)
        torsion = [[] for _ in range(K.dim + 1)]
        for k in range(1, K.dim + 1):
            inv = smith_invariants(boundary(K, k, signed=True))
            ranks[k] = len(inv)
            torsion[k - 1] = sorted(d for d in inv if d > 1)
        torsion = torsion[: top + 1]
    else:
        raise ValueError(f"unknown coefficient ring {ring!r}")
    b = [counts[k] - ranks[k] - ranks[k + 1] for k in range(top + 1)]
    return HomologyProfile(b, ring, torsion)


def is_acyclic(p: HomologyProfile, up_to: int | None = None) -> bool:
    up_to = len(p.betti) - 1 if up_to is None else up_to
    if len(p.betti) <= up_to:
        raise ValueError(f"profile only reaches dimension {len(p.betti) - 1}")
    if p.betti[0] != 1 or any(p.betti[k] for k in range(1, up_to + 1)):
        return False
    return not (p.coefficient_ring == "Z" and any(p.torsion[k] for k in range(min(up_to + 1, len(p.torsion)))))


@dataclass
class RipsRun:
    radius: float
    profile: HomologyProfile
    vertices: int
    core_vertices: int
    simplex_counts: list[int]

    def to_json(self) -> dict:
        return {"radius": self.radius, "profile": self.profile.to_json(), "vertices": self.vertices,
                "core_vertices": self.core_vertices, "simplex_counts": self.simplex_counts}


def rips_homology(points: np.ndarray, radius: float, max_dim: int | None = None,
                  ring: Ring = "Z/2", collapse: bool = True) -> RipsRun:
    """Homology of the Rips complex through dimension max_dim - 1.

    With ``collapse`` the graph is first stripped of dominated vertices,
    which leaves the homotopy type of the flag complex unchanged.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    max_dim = pts.shape[1] if max_dim is None else max_dim
    nbr = rips_graph(pts, radius)
    core = list(range(len(pts)))
    if collapse:
        core, nbr = collapse_dominated(nbr)
    K = clique_complex(nbr, max_dim, core)
    prof = betti(K, ring)
    b = (prof.betti + [0] * max_dim)[:max_dim]
    return RipsRun(radius, HomologyProfile(b, ring, prof.torsion[:max_dim]), len(pts), len(core), K.counts())


# --- file format ------------------------------------------------------------

def write_complex(path: str | Path, K: SimplicialComplex) -> None:
    with open(path, "w") as fh:
        fh.write(f"{K.dim} {K.vertex_count}\n")
        for level in K.simplices:
            for s in level:
                fh.write(" ".join(map(str, s)) + "\n")


def read_complex(path: str | Path) -> SimplicialComplex:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    dim, n = int(lines[0][0]), int(lines[0][1])
    levels: list[list[Simplex]] = [[] for _ in range(dim + 1)]
    for ln in lines[1:]:
        s = tuple(int(v) for v in ln)
        levels[len(s) - 1].append(s)
    K = SimplicialComplex(n, levels)
    K.validate()
    return K

