"""D8-equivariant parameterised circuit acting on the velocity register.

Six layer kinds, each one angle:

* ``X`` / ``Z``: the same single-qubit rotation on all four qubits.
* ``XXA`` / ``ZZA``: Ising couplings on the square's edges (0,1) (1,2) (2,3) (3,0).
* ``XXD`` / ``ZZD``: Ising couplings on the diagonals (0,2) (1,3).

Every layer is ``exp(-i theta/2 K)`` for a generator ``K`` that is a sum of
commuting Pauli strings.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from ._validation import check_populations, check_theta
from .losses import combined_loss_grad
from .qstate import DIM, N_QUBITS, encode

EDGE_PAIRS = ((0, 1), (1, 2), (2, 3), (3, 0))
DIAGONAL_PAIRS = ((0, 2), (1, 3))


class LayerKind(str, Enum):
    X = "X"
    Z = "Z"
    XXA = "XXA"
    XXD = "XXD"
    ZZA = "ZZA"
    ZZD = "ZZD"

    def __str__(self):
        return self.value

    @property
    def pairs(self):
        if self in (LayerKind.X, LayerKind.Z):
            return tuple((q,) for q in range(N_QUBITS))
        return EDGE_PAIRS if self.value.endswith("A") else DIAGONAL_PAIRS

    @property
    def is_diagonal(self):
        return self.value.startswith("Z")


def _z_eigen(qubits):
    return np.array([np.prod([1 - 2 * (k >> q & 1) for q in qubits]) for k in range(DIM)], dtype=np.float64)


def _layer_tables(kind):
    """(ltype, masks[4], nmask, diag[16]) for the compiled kernels."""
    masks = np.zeros(4, dtype=np.int64)
    diag = np.zeros(DIM)
    if kind.is_diagonal:
        for pair in kind.pairs:
            diag += _z_eigen(pair)
        return 1, masks, 0, diag
    for m, pair in enumerate(kind.pairs):
        masks[m] = sum(1 << q for q in pair)
    return 0, masks, len(kind.pairs), diag


_TABLES = {kind: _layer_tables(kind) for kind in LayerKind}


@dataclass(frozen=True)
class Architecture:
    """Ordered layer kinds; one trainable angle per layer."""

    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(LayerKind(k) for k in self.layers))

    @classmethod
    def from_blocks(cls, block=("X", "Z", "XXA", "ZZD"), n_blocks=15, tail=()):
        return cls(tuple(block) * n_blocks + tuple(tail))

    @classmethod
    def parse(cls, text):
        """Parse ``"X,Z,XXA,ZZD"``; an empty string is the empty circuit."""
        names = [t.strip() for t in text.replace(" ", ",").split(",") if t.strip()]
        try:
            return cls(tuple(names))
        except ValueError:
            raise ValueError(f"unknown layer kind in {text!r}; expected {[k.value for k in LayerKind]}") from None

    @property
    def n_params(self):
        return len(self.layers)

    def __len__(self):
        return len(self.layers)

    def __str__(self):
        return ",".join(k.value for k in self.layers)

    @cached_property
    def compiled(self):
        n = len(self.layers)
        ltypes = np.zeros(n, dtype=np.int64)
        masks = np.zeros((n, 4), dtype=np.int64)
        nmasks = np.zeros(n, dtype=np.int64)
        diags = np.zeros((n, DIM))
        for j, kind in enumerate(self.layers):
            ltypes[j], masks[j], nmasks[j], diags[j] = _TABLES[kind]
        return ltypes, masks, nmasks, diags


PAPER_BLOCK = ("X", "Z", "XXA", "ZZD")


def _as_states(state):
    s = np.array(state, dtype=np.complex128)
    if s.shape[-1] != DIM:
        raise ValueError(f"state must have {DIM} amplitudes, got shape {s.shape}")
    return s


def apply_layer(state, kind, theta):
    """Apply one layer to a state (or a stack of states)."""
    return forward(Architecture((kind,)), [theta], state)


def forward(arch, params, state):
    """Run the circuit on ``state`` (shape ``(16,)`` or ``(N, 16)``)."""
    theta = check_theta(params, arch.n_params)
    s = _as_states(state)
    flat = np.ascontiguousarray(s.reshape(-1, DIM))
    _kernels.forward_batch(flat, *arch.compiled, theta)
    return flat.reshape(s.shape)


def collide_sqc(arch, params, f16):
    """Surrogate collision: encode, run the circuit, read out ``rho |amp|^2``.

    ``f16`` is in slot layout with shape ``(16,)`` or ``(N, 16)``.
    """
    theta = check_theta(params, arch.n_params)
    f16 = check_populations(f16, width=DIM, name="f16")
    flat = np.ascontiguousarray(f16.reshape(-1, DIM))
    if np.any(flat.sum(axis=1) <= 0):
        raise ValueError("cannot collide a node with zero total mass")
    out = np.empty_like(flat)
    _kernels.collide_nodes(flat, out, *arch.compiled, theta)
    return out.reshape(f16.shape)


def circuit_unitary(arch, params):
    """Dense 16x16 matrix of the circuit (column k is the image of basis k)."""
    return forward(arch, params, np.eye(DIM, dtype=np.complex128)).T


def loss_gradient(arch, params, f_pre16, f_post16, alpha=0.0, return_loss=False):
    """Exact gradient of ``mse + alpha * momentum_penalty`` over a batch.

    Reverse-mode through the layer sequence: one forward pass, then the
    output state and its cotangent are uncomputed together while each
    layer contributes ``Im <lambda| K |psi>``.
    """
    theta = check_theta(params, arch.n_params)
    pre = np.atleast_2d(check_populations(f_pre16, width=DIM, name="f_pre16"))
    post = np.atleast_2d(np.asarray(f_post16, dtype=np.float64))
    if pre.shape[0] == 0:
        raise ValueError("empty batch")
    if post.shape != pre.shape:
        raise ValueError(f"batch shape mismatch {pre.shape} vs {post.shape}")
    psi, rho = encode(pre)
    loss, grad = _loss_grad_encoded(arch, theta, psi, rho, post, alpha)
    return (loss, grad) if return_loss else grad


def _loss_grad_encoded(arch, theta, psi, rho, post, alpha):
    """Loss and adjoint gradient for already-encoded inputs (no validation)."""
    psi = np.array(psi, dtype=np.complex128, order="C")
    compiled = arch.compiled
    _kernels.forward_batch(psi, *compiled, theta)
    pred = rho[:, None] * (psi.real**2 + psi.imag**2)
    loss, dpred = combined_loss_grad(pred, post, alpha)
    lam = np.ascontiguousarray(rho[:, None] * dpred * psi)
    grad = _kernels.adjoint_gradient(psi, lam, *compiled, theta)
    return loss, grad


# --- native gate decomposition ----------------------------------------------


class Gate(NamedTuple):
    name: str
    qubits: tuple
    angle: Optional[float] = None


@dataclass(frozen=True)
class NativeGateCount:
    rz: int = 0
    sx: int = 0
    cz: int = 0

    @property
    def total(self):
        return self.rz + self.sx + self.cz

    def __add__(self, other):
        return NativeGateCount(self.rz + other.rz, self.sx + other.sx, self.cz + other.cz)

    def __mul__(self, n):
        return NativeGateCount(self.rz * n, self.sx * n, self.cz * n)

    @classmethod
    def of(cls, gates):
        names = [g.name for g in gates]
        return cls(names.count("RZ"), names.count("SX"), names.count("CZ"))


_HALF_PI = np.pi / 2


def _hadamard(q):
    return [Gate("RZ", (q,), _HALF_PI), Gate("SX", (q,)), Gate("RZ", (q,), _HALF_PI)]


def _rx(q, theta):
    return [
        Gate("RZ", (q,), _HALF_PI),
        Gate("SX", (q,)),
        Gate("RZ", (q,), theta + np.pi),
        Gate("SX", (q,)),
        Gate("RZ", (q,), _HALF_PI),
    ]


def _zz(a, b, theta):
    # CNOT(a->b) RZ_b CNOT(a->b), with CNOT = H_b CZ H_b
    cnot = _hadamard(b) + [Gate("CZ", (a, b))] + _hadamard(b)
    return cnot + [Gate("RZ", (b,), theta)] + cnot


def _xx(a, b, theta):
    hh = _hadamard(a) + _hadamard(b)
    return hh + _zz(a, b, theta) + hh


def decompose_layer(kind, theta):
    """Native {RZ, SX, CZ} sequence (time order) for a layer, and its counts.

    The product of the emitted gates equals the layer unitary up to a
    global phase.
    """
    kind = LayerKind(kind)
    theta = float(theta)
    gates = []
    for pair in kind.pairs:
        if kind is LayerKind.X:
            gates += _rx(pair[0], theta)
        elif kind is LayerKind.Z:
            gates.append(Gate("RZ", pair, theta))
        elif kind.is_diagonal:
            gates += _zz(*pair, theta)
        else:
            gates += _xx(*pair, theta)
    return gates, NativeGateCount.of(gates)


LAYER_GATE_COUNTS = {kind: decompose_layer(kind, 0.0)[1] for kind in LayerKind}


def total_gate_count(arch):
    total = NativeGateCount()
    for kind in arch.layers:
        total = total + LAYER_GATE_COUNTS[kind]
    return total


def decompose(arch, params):
    theta = check_theta(params, arch.n_params)
    gates = []
    for kind, t in zip(arch.layers, theta):
        gates += decompose_layer(kind, t)[0]
    return gates


def format_gate_listing(gates):
    """One gate per line: name, qubit(s), angle (radians, repr precision)."""
    lines = []
    for g in gates:
        fields = [g.name] + [f"q{q}" for q in g.qubits]
        if g.angle is not None:
            fields.append(repr(float(g.angle)))
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


_SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]])


def _rz(phi):
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


def gate_matrix(gate):
    """Dense 16x16 matrix of a native gate; qubit q is bit q of the basis index."""
    if gate.name == "CZ":
        a, b = gate.qubits
        return np.diag([-1.0 if (k >> a & 1) and (k >> b & 1) else 1.0 for k in range(DIM)]).astype(complex)
    local = _SX if gate.name == "SX" else _rz(gate.angle)
    if gate.name not in ("SX", "RZ"):
        raise ValueError(f"not a native gate: {gate.name}")
    full = np.array([[1.0 + 0j]])
    for q in reversed(range(N_QUBITS)):
        full = np.kron(full, local if q == gate.qubits[0] else np.eye(2))
    return full


def gates_to_unitary(gates):
    u = np.eye(DIM, dtype=complex)
    for g in gates:
        u = gate_matrix(g) @ u
    return u
