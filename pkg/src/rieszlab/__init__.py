"""Computational laboratory for lattice truncation of convex sets.

Lattice arithmetic on R^n, truncated convex polytopes, Vietoris-Rips
homology, compressive covers with a constructive lifting procedure, a
partition-of-unity retraction, and the Kinoshita tin-can space.
"""

__version__ = "0.1.0"
