"""Seeded drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex import RipsRun, connectivity_radius, is_acyclic, rips_homology, rips_radius
from .convex import Polytope, sample_truncated

SCALES = (0.8, 1.0, 1.2)
RADIUS_COEFF = 3.0
CONNECT_MARGIN = 1.25


def heuristic_radius(points: np.ndarray, coeff: float = RADIUS_COEFF, connect: bool = True) -> float:
    """``coeff`` x mean 5-NN distance, floored so that every tested scale is connected.

    The floor is the longest minimum-spanning-tree edge over the smallest
    perturbation factor; a connected set never needs fewer components.
    """
    r = rips_radius(points, coeff)
    if connect:
        r = max(r, CONNECT_MARGIN * connectivity_radius(points))
    return r


def disk_through_corner(m: int = 32, center=(0.2, 0.2, 0.2), radius: float = 1.0) -> Polytope:
    """Regular m-gon in the plane normal to (1,1,1), pierced by the corner of the orthant."""
    c = np.asarray(center, dtype=float)
    a = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    b = np.cross(np.ones(3) / np.sqrt(3), a)
    ang = 2 * np.pi * np.arange(m) / m
    return Polytope(c + radius * (np.outer(np.cos(ang), a) + np.outer(np.sin(ang), b)))


def random_body(rng: np.random.Generator, n: int = 3, min_vertices: int = 4,
                max_vertices: int = 12, shift: float = 0.6) -> Polytope:
    """Hull of points on the unit sphere moved by a random shift, so it straddles the cone."""
    m = int(rng.integers(min_vertices, max_vertices + 1))
    V = rng.normal(size=(m, n))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return Polytope(V + rng.uniform(-shift, shift, n))


@dataclass
class BodyRun:
    label: str
    runs: list[RipsRun]

    @property
    def acyclic(self) -> bool:
        return all(is_acyclic(r.profile, len(r.profile.betti) - 1) for r in self.runs)

    def to_json(self) -> dict:
        return {"label": self.label, "acyclic": self.acyclic, "runs": [r.to_json() for r in self.runs]}


def truncation_homology(P: Polytope, n: int, seed: int, coeff: float = RADIUS_COEFF,
                        scales=SCALES, label: str = "", ring: str = "Z/2") -> BodyRun:
    """Rips homology of a sample of D = u(P) at the heuristic scale and its perturbations."""
    D = sample_truncated(P, n, seed).points
    r = heuristic_radius(D, coeff)
    return BodyRun(label, [rips_homology(D, f * r, ring=ring) for f in scales])


def body_family(count: int, seed: int, n: int = 3) -> list[tuple[str, Polytope]]:
    """The disk through the corner followed by ``count - 1`` seeded random bodies."""
    rng = np.random.default_rng(seed)
    bodies = [("disk-through-corner", disk_through_corner())] if n == 3 else []
    while len(bodies) < count:
        bodies.append((f"random-{len(bodies)}", random_body(rng, n)))
    return bodies
