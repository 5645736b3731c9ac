"""Four-qubit velocity register: rooted-density encoding and D8 qubit permutations.

States are complex arrays with a trailing axis of 16 amplitudes, indexed by
the basis integer ``Q3 Q2 Q1 Q0``.  Population vectors in "slot" layout use
the same 16 indices; :func:`embed` and :func:`physical` convert between the
9-population and slot layouts.
"""

import numpy as np

from ._validation import check_density, check_populations
from .lattice import VELOCITIES_INT

N_QUBITS = 4
DIM = 2**N_QUBITS


def _basis_of_velocity(e):
    # axial direction q (0, 90, 180, 270 degrees) lives on qubit q
    axial = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}
    idx = 0
    for comp in ((e[0], 0), (0, e[1])):
        if comp != (0, 0):
            idx |= 1 << axial[comp]
    return idx


POP_TO_BASIS = np.array([_basis_of_velocity(e) for e in VELOCITIES_INT])
SURPLUS = np.array(sorted(set(range(DIM)) - set(POP_TO_BASIS.tolist())))
# slot k carries velocity SLOT_VELOCITIES[k]; surplus slots have none
SLOT_VELOCITIES = np.zeros((DIM, 2))
SLOT_VELOCITIES[POP_TO_BASIS] = np.array(VELOCITIES_INT, dtype=np.float64)


def embed(f9):
    """Place 9 populations at their basis slots; surplus slots are zero."""
    f9 = np.asarray(f9, dtype=np.float64)
    out = np.zeros(f9.shape[:-1] + (DIM,))
    out[..., POP_TO_BASIS] = f9
    return out


def physical(f16):
    """The 9 physical populations of a slot-layout vector."""
    return np.asarray(f16)[..., POP_TO_BASIS]


def encode(f16):
    """Rooted-density encoding. Returns ``(state, rho)`` with ``rho = sum(f16)``."""
    f16 = check_populations(f16, width=DIM, name="f16")
    # summing in sorted order makes rho (and so the state) independent of slot
    # order, which keeps the D8 equivariance of the encoding bit-exact
    rho = np.sort(f16, axis=-1).sum(axis=-1)
    if np.any(rho <= 0):
        raise ValueError("cannot encode a state with zero total mass")
    state = np.sqrt(f16 / rho[..., None]).astype(np.complex128)
    return state, rho


def decode(state, rho):
    """Probability read-out ``rho * |amp|^2`` over all 16 slots."""
    rho = check_density(rho)
    state = np.asarray(state)
    return rho[..., None] * (state.real**2 + state.imag**2)


def qubit_permutation(sigma):
    """Qubit index that each qubit is carried to by ``sigma``."""
    # axial population i = q + 1 sits on qubit q
    return tuple(sigma.perm[q + 1] - 1 for q in range(N_QUBITS))


def basis_permutation(sigma):
    """Permutation of the 16 basis states induced by permuting qubits."""
    qperm = qubit_permutation(sigma)
    out = np.zeros(DIM, dtype=np.intp)
    for k in range(DIM):
        for q in range(N_QUBITS):
            if k >> q & 1:
                out[k] |= 1 << qperm[q]
    return out


_BASIS_PERMS = {}


def _cached_basis_perm(sigma):
    if sigma.label not in _BASIS_PERMS:
        _BASIS_PERMS[sigma.label] = basis_permutation(sigma)
    return _BASIS_PERMS[sigma.label]


def apply_qubit_permutation(sigma, state):
    """Apply ``U_sigma``: amplitude on basis ``k`` moves to ``basis_perm[k]``."""
    state = np.asarray(state)
    out = np.empty_like(state)
    out[..., _cached_basis_perm(sigma)] = state
    return out


def apply_d8_slots(sigma, f16):
    """D8 action on a slot-layout population vector (surplus slots included)."""
    return apply_qubit_permutation(sigma, f16)
