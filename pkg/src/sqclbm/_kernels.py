"""Compiled statevector loops.

A layer is described by ``ltype`` (0: product of commuting Pauli-X strings,
each applied as ``cos * psi - i sin * psi[k ^ mask]``; 1: diagonal generator
with eigenvalues ``diag``).  All same-kind terms commute, so mask order does
not change the unitary; it is fixed for bit-reproducibility.
"""

import math

import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old for numba; prefer OpenMP, fall back to workqueue
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

DIM = 16


@njit(cache=True)
def _apply_layer(psi, ltype, masks, nmask, diag, theta, tmp):
    if ltype == 1:
        for k in range(DIM):
            a = -0.5 * theta * diag[k]
            psi[k] *= complex(math.cos(a), math.sin(a))
    else:
        c = math.cos(0.5 * theta)
        s = math.sin(0.5 * theta)
        for m in range(nmask):
            mk = masks[m]
            for k in range(DIM):
                tmp[k] = psi[k]
            for k in range(DIM):
                v = tmp[k ^ mk]
                psi[k] = c * tmp[k] + complex(s * v.imag, -s * v.real)


@njit(cache=True)
def _generator_overlap(lam, psi, ltype, masks, nmask, diag):
    """Return <lam| K |psi> for the layer generator K."""
    acc = 0j
    if ltype == 1:
        for k in range(DIM):
            acc += lam[k].conjugate() * diag[k] * psi[k]
    else:
        for k in range(DIM):
            s = 0j
            for m in range(nmask):
                s += psi[k ^ masks[m]]
            acc += lam[k].conjugate() * s
    return acc


@njit(cache=True)
def forward_batch(states, ltypes, masks, nmasks, diags, theta):
    tmp = np.empty(DIM, dtype=np.complex128)
    for b in range(states.shape[0]):
        psi = states[b]
        for j in range(theta.shape[0]):
            _apply_layer(psi, ltypes[j], masks[j], nmasks[j], diags[j], theta[j], tmp)


@njit(cache=True)
def adjoint_gradient(states, lams, ltypes, masks, nmasks, diags, theta):
    """Reverse-mode gradient ``sum_b Im <lam_j| K_j |psi_j>``.

    ``states`` are the circuit outputs and ``lams`` the output cotangents
    ``dL/dpsi*``; both are uncomputed layer by layer (destroyed in place).
    """
    n = theta.shape[0]
    grad = np.zeros(n)
    tmp = np.empty(DIM, dtype=np.complex128)
    for b in range(states.shape[0]):
        psi = states[b]
        lam = lams[b]
        for j in range(n - 1, -1, -1):
            grad[j] += _generator_overlap(lam, psi, ltypes[j], masks[j], nmasks[j], diags[j]).imag
            _apply_layer(psi, ltypes[j], masks[j], nmasks[j], diags[j], -theta[j], tmp)
            _apply_layer(lam, ltypes[j], masks[j], nmasks[j], diags[j], -theta[j], tmp)
    return grad


@njit(cache=True, parallel=True)
def collide_nodes(f, out, ltypes, masks, nmasks, diags, theta):
    """Encode, run the circuit and read out every row of ``f`` (shape (N, 16))."""
    for i in prange(f.shape[0]):
        tmp = np.empty(DIM, dtype=np.complex128)
        psi = np.empty(DIM, dtype=np.complex128)
        rho = 0.0
        for k in range(DIM):
            rho += f[i, k]
        for k in range(DIM):
            psi[k] = math.sqrt(f[i, k] / rho)
        for j in range(theta.shape[0]):
            _apply_layer(psi, ltypes[j], masks[j], nmasks[j], diags[j], theta[j], tmp)
        for k in range(DIM):
            out[i, k] = rho * (psi[k].real ** 2 + psi[k].imag ** 2)
