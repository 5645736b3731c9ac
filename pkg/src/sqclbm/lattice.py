"""D2Q9 lattice: equilibrium, BGK collision, moments and the D8 symmetry group.

Populations always live on the last array axis, so every function here is
vectorised over leading (node / sample) axes.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._validation import check_density, check_populations, check_tau

# e_0 rest, e_1..e_4 axial (E, N, W, S), e_5..e_8 diagonal (NE, NW, SW, SE)
VELOCITIES_INT = ((0, 0), (1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1))
WEIGHTS_EXACT = (Fraction(4, 9),) + (Fraction(1, 9),) * 4 + (Fraction(1, 36),) * 4
CS2_EXACT = Fraction(1, 3)

VELOCITIES = np.array(VELOCITIES_INT, dtype=np.float64)
WEIGHTS = np.array([float(w) for w in WEIGHTS_EXACT])
CS2 = float(CS2_EXACT)
OPPOSITE = np.array([VELOCITIES_INT.index((-x, -y)) for x, y in VELOCITIES_INT])


@dataclass(frozen=True)
class LatticeDescriptor:
    weights: tuple
    velocities: tuple
    cs2: Fraction
    opposite: tuple


D2Q9 = LatticeDescriptor(WEIGHTS_EXACT, VELOCITIES_INT, CS2_EXACT, tuple(int(i) for i in OPPOSITE))


def equilibrium(rho, u):
    """Second-order equilibrium populations for density ``rho`` and velocity ``u``.

    ``rho`` has shape ``(...)`` and ``u`` shape ``(..., 2)``; the result has
    shape ``(..., 9)``.
    """
    rho = check_density(rho)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != 2:
        raise ValueError(f"u must have last axis of length 2, got shape {u.shape}")
    eu = u @ VELOCITIES.T
    usq = np.sum(u * u, axis=-1)[..., None]
    return WEIGHTS * rho[..., None] * (
        1.0 + eu / CS2 + (eu * eu - CS2 * usq) / (2.0 * CS2 * CS2)
    )


def _moments(f):
    rho = f.sum(axis=-1)
    return rho, f @ VELOCITIES


def moments(f):
    """Density and velocity ``(rho, u)`` of populations ``f`` (shape ``(..., 9)``)."""
    f = check_populations(f, width=9, allow_negative=True)
    rho, mom = _moments(f)
    if np.any(rho <= 0):
        raise ValueError("degenerate state: non-positive density")
    return rho, mom / rho[..., None]


def bgk_collide(f, tau):
    """Single-relaxation-time collision ``f - (f - f_eq(moments(f))) / tau``."""
    tau = check_tau(tau)
    f = check_populations(f, width=9, allow_negative=True)
    rho, u = moments(f)
    return f - (f - equilibrium(rho, u)) / tau


def viscosity(tau):
    """Kinematic viscosity in lattice units, ``cs2 * (tau - 1/2)``."""
    return CS2 * (check_tau(tau) - 0.5)


def tau_from_viscosity(nu):
    return nu / CS2 + 0.5


# --- D8 ---------------------------------------------------------------------

_LABELS = ("I", "r", "r2", "r3", "s", "rs", "r2s", "r3s")
_ROT = np.array([[0, -1], [1, 0]])
_REF = np.array([[1, 0], [0, -1]])  # reflection across the horizontal axis


@dataclass(frozen=True)
class D8Element:
    """A symmetry of the square acting on D2Q9 populations.

    ``perm[i]`` is the index of the velocity that ``e_i`` is mapped to.
    """

    label: str
    matrix: tuple
    perm: tuple

    def __repr__(self):
        return f"D8Element({self.label!r})"


def _perm_from_matrix(m):
    return tuple(VELOCITIES_INT.index(tuple(int(c) for c in m @ np.array(e))) for e in VELOCITIES_INT)


def _build_group():
    elements = []
    for label in _LABELS:
        k = {"I": 0, "r": 1, "r2": 2, "r3": 3}.get(label.rstrip("s"), 0)
        m = np.linalg.matrix_power(_ROT, k)
        if label.endswith("s"):
            m = m @ _REF
        elements.append(D8Element(label, tuple(map(tuple, m.tolist())), _perm_from_matrix(m)))
    return tuple(elements)


D8 = _build_group()
_BY_LABEL = {g.label: g for g in D8}
_BY_PERM = {g.perm: g for g in D8}


def d8_element(label):
    try:
        return _BY_LABEL[label.replace("²", "2").replace("³", "3")]
    except KeyError:
        raise ValueError(f"unknown D8 element {label!r}; expected one of {_LABELS}") from None


def d8_compose(a, b):
    """Element acting as ``b`` followed by ``a``."""
    perm = tuple(a.perm[b.perm[i]] for i in range(9))
    return _BY_PERM[perm]


def apply_d8(sigma, f):
    """Permute populations: the value at ``e_i`` moves to ``sigma(e_i)``."""
    f = np.asarray(f)
    out = np.empty_like(f)
    out[..., list(sigma.perm)] = f
    return out
