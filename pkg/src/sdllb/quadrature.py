"""Symmetric Gaussian rules on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class QuadRule:
    """Barycentric points (n, 3) and weights (n,) summing to one."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xi(self) -> np.ndarray:
        """Reference coordinates (n, 2) of the points."""
        return self.points[:, 1:]


def _orbit(*bary: float) -> list[tuple[float, float, float]]:
    return sorted(set(permutations(bary)))


def _build(orbits, degree: int) -> QuadRule:
    pts, wts = [], []
    for bary, w in orbits:
        for p in _orbit(*bary):
            pts.append(p)
            wts.append(w)
    return QuadRule(np.array(pts), np.array(wts), degree)


# Dunavant rules, polished by least squares on the monomial moments.
_A4, _B4 = 0.44594849091596483, 0.09157621350977076
_RULES = {
    2: [((0.5, 0.5, 0.0), 1.0 / 3.0)],
    4: [
        ((_A4, _A4, 1 - 2 * _A4), 0.22338158967801136),
        ((_B4, _B4, 1 - 2 * _B4), 0.10995174365532195),
    ],
    8: [
        ((1 / 3, 1 / 3, 1 / 3), 0.14431560767770782),
        ((0.4592925882926715, 0.4592925882926715, 1 - 2 * 0.4592925882926715), 0.0950916342673354),
        ((0.1705693077517001, 0.1705693077517001, 1 - 2 * 0.1705693077517001), 0.10321737053473759),
        ((0.050547228317034, 0.050547228317034, 1 - 2 * 0.050547228317034), 0.0324584976232063),
        ((0.00839477740986903, 0.26311282963482224, 1 - 0.00839477740986903 - 0.26311282963482224), 0.02723031417440905),
    ],
}


def quadrature_for(degree: int) -> QuadRule:
    """Rule exact for bivariate polynomials up to ``degree`` (2, 4 or 8)."""
    if degree not in _RULES:
        raise ValueError(f"no triangle rule of degree {degree}; supported: 2, 4, 8")
    return _build(_RULES[degree], degree)
