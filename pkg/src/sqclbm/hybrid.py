"""Two-dimensional LBM driver with a pluggable collision backend.

The grid stores 16 slots per node (``f[x, y, k]`` in basis layout): the nine
physical populations plus seven surplus slots with zero velocity, which only
the surrogate backend ever fills.  A step is collide -> bounce-back -> stream.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._validation import check_tau
from .circuit import collide_sqc
from .lattice import CS2, OPPOSITE, WEIGHTS, bgk_collide, equilibrium, tau_from_viscosity, viscosity
from .qstate import DIM, POP_TO_BASIS, SLOT_VELOCITIES, SURPLUS, embed

log = logging.getLogger(__name__)

SLOT_VEL_INT = SLOT_VELOCITIES.astype(int)
SLOT_WEIGHTS = np.zeros(DIM)
SLOT_WEIGHTS[POP_TO_BASIS] = WEIGHTS
SLOT_OPPOSITE = np.arange(DIM)
SLOT_OPPOSITE[POP_TO_BASIS] = POP_TO_BASIS[OPPOSITE]
MOVING_SLOTS = POP_TO_BASIS[1:]


class NodeKind(IntEnum):
    FLUID = 0
    WALL = 1
    MOVING_LID = 2


@dataclass
class Grid:
    f: np.ndarray  # (nx, ny, 16)
    kind: np.ndarray  # (nx, ny) NodeKind codes
    u_lid: float = 0.0
    _buf: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._buf is None:
            self._buf = np.empty_like(self.f)

    @property
    def shape(self):
        return self.f.shape[:2]

    @property
    def fluid(self):
        return self.kind == NodeKind.FLUID

    def wall_velocity(self):
        uw = np.zeros(self.shape + (2,))
        uw[self.kind == NodeKind.MOVING_LID, 0] = self.u_lid
        return uw

    def total_mass(self):
        return float(self.f[self.fluid].sum())

    def copy(self):
        return Grid(self.f.copy(), self.kind.copy(), self.u_lid)


def init_taylor_green(nx=64, ny=64, u0=0.01):
    """Periodic vortex array at equilibrium with rho = 1."""
    if nx <= 0 or ny <= 0:
        raise ValueError("grid dimensions must be positive")
    kx, ky = 2 * np.pi / nx, 2 * np.pi / ny
    x = np.arange(nx)[:, None]
    y = np.arange(ny)[None, :]
    u = np.empty((nx, ny, 2))
    u[..., 0] = u0 * np.sin(kx * x) * np.cos(ky * y)
    u[..., 1] = -u0 * np.cos(kx * x) * np.sin(ky * y)
    f = embed(equilibrium(np.ones((nx, ny)), u))
    return Grid(f, np.zeros((nx, ny), dtype=np.int8))


def init_lid_cavity(nx=64, ny=64, u_lid=0.026):
    """Closed box: outer ring of wall nodes, the top row (y = ny-1) moving in +x."""
    if nx <= 2 or ny <= 2:
        raise ValueError("cavity needs at least 3 nodes per side")
    kind = np.full((nx, ny), NodeKind.WALL, dtype=np.int8)
    kind[1:-1, 1:-1] = NodeKind.FLUID
    kind[:, -1] = NodeKind.MOVING_LID
    f = np.zeros((nx, ny, DIM))
    fluid = kind == NodeKind.FLUID
    f[fluid] = embed(equilibrium(np.ones(int(fluid.sum())), np.zeros((int(fluid.sum()), 2))))
    return Grid(f, kind, float(u_lid))


def stream(grid):
    """Move every slot one node along its velocity (periodic wrap); swap buffers."""
    for k in range(DIM):
        ex, ey = SLOT_VEL_INT[k]
        if ex == 0 and ey == 0:
            grid._buf[..., k] = grid.f[..., k]
        else:
            grid._buf[..., k] = np.roll(grid.f[..., k], (ex, ey), axis=(0, 1))
    grid.f, grid._buf = grid._buf, grid.f
    return grid


def apply_bounce_back(grid):
    """Halfway bounce-back, applied to post-collision populations before streaming.

    Each solid node is loaded with the reflected populations of its fluid
    neighbours so the following :func:`stream` delivers them back:
    ``f_j(x, t+1) = f*_opp(j)(x, t) - 2 w rho (e_opp(j) . u_wall) / cs2``.
    """
    fluid = grid.fluid
    if fluid.all():
        return grid
    solid = ~fluid
    rho = grid.f.sum(axis=-1)
    uw = grid.wall_velocity()
    for j in MOVING_SLOTS:
        shift = tuple(-SLOT_VEL_INT[j])
        o = SLOT_OPPOSITE[j]
        target = solid & np.roll(fluid, shift, axis=(0, 1))
        if not target.any():
            continue
        src = np.roll(grid.f[..., o], shift, axis=(0, 1))
        rho_n = np.roll(rho, shift, axis=(0, 1))
        corr = 2.0 * SLOT_WEIGHTS[o] * rho_n * (uw @ SLOT_VELOCITIES[o]) / CS2
        fj = grid.f[..., j]
        fj[solid] = 0.0
        fj[target] = (src - corr)[target]
    return grid


# --- collision backends -------------------------------------------------------


class BGKBackend:
    name = "bgk"

    def __init__(self, tau):
        self.tau = check_tau(tau)

    def collide(self, f16):
        out = f16.copy()
        out[:, POP_TO_BASIS] = bgk_collide(f16[:, POP_TO_BASIS], self.tau)
        return out


SURPLUS_MODES = ("persist", "fold", "drop")


class SQCBackend:
    """Trained circuit applied independently at every node.

    ``surplus="persist"`` keeps the surplus slots between steps; ``"fold"``
    moves surplus mass into the rest slot before each collision (both carry
    zero velocity, so mass and momentum are unchanged and the circuit only sees
    inputs shaped like its training data); ``"drop"`` zeroes them (a diagnostic
    that does not conserve mass).
    """

    name = "sqc"

    def __init__(self, architecture, theta, surplus="persist"):
        if surplus not in SURPLUS_MODES:
            raise ValueError(f"surplus mode must be one of {SURPLUS_MODES}, got {surplus!r}")
        self.architecture = architecture
        self.theta = np.asarray(theta, dtype=np.float64)
        self.surplus = surplus
        self.max_mass_defect = 0.0

    @classmethod
    def from_checkpoint(cls, ckpt, surplus="persist"):
        return cls(ckpt.architecture, ckpt.theta, surplus)

    def collide(self, f16):
        if self.surplus == "drop":
            f16 = embed(f16[:, POP_TO_BASIS])
        elif self.surplus == "fold":
            f16 = f16.copy()
            f16[:, 0] += f16[:, SURPLUS].sum(axis=1)
            f16[:, SURPLUS] = 0.0
        if np.any(f16 < 0):
            # only the moving-wall correction can push a population below zero
            raise FloatingPointError(
                f"negative population {f16.min():.3e} reached the square-root encoding; "
                "the moving-wall term exceeded the reflected population"
            )
        out = collide_sqc(self.architecture, self.theta, f16)
        defect = float(np.max(np.abs(out.sum(axis=1) - f16.sum(axis=1)), initial=0.0))
        self.max_mass_defect = max(self.max_mass_defect, defect)
        return out


def step(grid, backend):
    fluid = grid.fluid
    grid.f[fluid] = backend.collide(grid.f[fluid])
    apply_bounce_back(grid)
    return stream(grid)


# --- driver -------------------------------------------------------------------

CASES = ("taylor_green", "lid_cavity")


@dataclass
class SimConfig:
    case: str = "taylor_green"
    nx: int = 64
    ny: int = 64
    tau: float = None  # None: 1.0 for Taylor-Green, derived from re for the cavity
    u0: float = 0.01
    u_lid: float = 0.026
    re: float = 10.0
    steps: int = 1000
    backend: str = "bgk"
    checkpoint: str = None
    snapshot_every: int = 0
    surplus: str = "persist"

    def resolved_tau(self):
        if self.tau is not None:
            return check_tau(self.tau)
        if self.case == "lid_cavity":
            return check_tau(tau_from_viscosity(self.u_lid * self.nx / self.re))
        return 1.0

    def validate(self):
        if self.case not in CASES:
            raise ValueError(f"case must be one of {CASES}, got {self.case!r}")
        if self.backend not in ("bgk", "sqc"):
            raise ValueError(f"backend must be 'bgk' or 'sqc', got {self.backend!r}")
        if self.surplus not in SURPLUS_MODES:
            raise ValueError(f"surplus must be one of {SURPLUS_MODES}, got {self.surplus!r}")
        if self.steps < 0 or self.snapshot_every < 0:
            raise ValueError("steps and snapshot_every must be non-negative")
        self.resolved_tau()
        return self


@dataclass
class FieldSnapshot:
    t: int
    rho: np.ndarray
    ux: np.ndarray
    uy: np.ndarray

    @property
    def speed(self):
        return np.hypot(self.ux, self.uy)

    @property
    def shape(self):
        return self.rho.shape


def snapshot(grid, t):
    """Macroscopic fields; density over all 16 slots, momentum over the 9 physical ones.

    Solid nodes report rho = 0 and their wall velocity.
    """
    rho = grid.f.sum(axis=-1)
    mom = grid.f @ SLOT_VELOCITIES
    fluid = grid.fluid
    u = np.zeros_like(mom)
    u[fluid] = mom[fluid] / rho[fluid][:, None]
    uw = grid.wall_velocity()
    u[~fluid] = uw[~fluid]
    rho = np.where(fluid, rho, 0.0)
    return FieldSnapshot(t, rho, u[..., 0].copy(), u[..., 1].copy())


def make_backend(cfg, checkpoint=None):
    if cfg.backend == "bgk":
        return BGKBackend(cfg.resolved_tau())
    if checkpoint is None:
        if cfg.checkpoint is None:
            raise ValueError("the sqc backend needs a checkpoint")
        from .persistence import load_checkpoint

        checkpoint = load_checkpoint(cfg.checkpoint)
    return SQCBackend.from_checkpoint(checkpoint, cfg.surplus)


def initial_grid(cfg):
    if cfg.case == "taylor_green":
        return init_taylor_green(cfg.nx, cfg.ny, cfg.u0)
    return init_lid_cavity(cfg.nx, cfg.ny, cfg.u_lid)


def run(cfg, backend=None):
    """Advance a benchmark case; returns ``(snapshots, metrics)``.

    Snapshots are taken at t = 0, every ``snapshot_every`` steps and at the
    end.  Metrics hold the total-mass series, peak-speed series and, for
    Taylor-Green, the fitted and analytic decay rates.
    """
    cfg.validate()
    backend = backend or make_backend(cfg)
    grid = initial_grid(cfg)
    fluid = grid.fluid
    snaps = [snapshot(grid, 0)]
    mass = [grid.total_mass()]
    peak = [float(snaps[0].speed[fluid].max())]
    for t in range(1, cfg.steps + 1):
        step(grid, backend)
        snap = snapshot(grid, t)
        mass.append(grid.total_mass())
        peak.append(float(snap.speed[fluid].max()))
        if t == cfg.steps or (cfg.snapshot_every and t % cfg.snapshot_every == 0):
            snaps.append(snap)
        if not np.isfinite(mass[-1]):
            raise FloatingPointError(f"simulation diverged at step {t}")
    mass = np.array(mass)
    tau = cfg.resolved_tau()
    metrics = {
        "case": cfg.case,
        "backend": backend.name,
        "tau": tau,
        "nu": viscosity(tau),
        "mass": mass,
        "peak_speed": np.array(peak),
        "mass_drift_rel": float(np.max(np.abs(mass - mass[0])) / mass[0]),
    }
    if isinstance(backend, SQCBackend):
        metrics["max_node_mass_defect"] = backend.max_mass_defect
    if cfg.case == "taylor_green" and cfg.steps > 1:
        k2 = (2 * np.pi / cfg.nx) ** 2 + (2 * np.pi / cfg.ny) ** 2
        analytic = viscosity(tau) * k2
        fitted = decay_rate(metrics["peak_speed"])
        metrics.update(
            decay_rate_fit=fitted,
            decay_rate_analytic=analytic,
            decay_rate_rel_error=abs(fitted - analytic) / analytic,
        )
    return snaps, metrics


def decay_rate(series):
    """Least-squares rate ``g`` of ``series ~ A exp(-g t)``."""
    t = np.arange(len(series))
    slope, _ = np.polyfit(t, np.log(series), 1)
    return float(-slope)


def centerline_profiles(snap, u_ref):
    """Velocity profiles along the mid-lines, normalised by ``u_ref``.

    Returns ``(horizontal, vertical)``: rows ``(x, ux, uy)`` along
    ``y = ny // 2`` and rows ``(y, ux, uy)`` along ``x = nx // 2``.
    """
    nx, ny = snap.shape
    ym, xm = ny // 2, nx // 2
    horizontal = np.column_stack([np.arange(nx), snap.ux[:, ym] / u_ref, snap.uy[:, ym] / u_ref])
    vertical = np.column_stack([np.arange(ny), snap.ux[xm, :] / u_ref, snap.uy[xm, :] / u_ref])
    return horizontal, vertical


def error_fields(a, b, floor=1e-12):
    """Relative and absolute velocity-magnitude error of ``a`` against reference ``b``."""
    if a.shape != b.shape:
        raise ValueError(f"snapshot shapes differ: {a.shape} vs {b.shape}")
    sa, sb = a.speed, b.speed
    absolute = np.abs(sa - sb)
    return absolute / np.maximum(sb, floor), absolute
