"""Input validation helpers shared by the estimators and the library functions."""

import numpy as np

N_POP = 9
N_SLOTS = 16


def check_populations(f, *, width=None, allow_negative=False, name="f"):
    """Return ``f`` as a float64 array whose last axis holds populations.

    ``width`` restricts the last axis to 9 (physical) or 16 (slots); ``None``
    accepts either.
    """
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 0:
        raise ValueError(f"{name} must have a population axis, got a scalar")
    allowed = (N_POP, N_SLOTS) if width is None else (width,)
    if arr.shape[-1] not in allowed:
        raise ValueError(
            f"{name} must have last axis of length {' or '.join(map(str, allowed))}, "
            f"got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if not allow_negative and np.any(arr < 0):
        raise ValueError(f"{name} contains negative populations")
    return arr


def check_tau(tau):
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.5:
        raise ValueError(
            f"relaxation time tau={tau} must exceed 0.5 "
            "(viscosity nu = cs2 * (tau - 1/2) must be positive)"
        )
    return tau


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_density(rho, name="rho"):
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return rho


def check_theta(theta, n_params):
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != n_params:
        raise ValueError(f"expected {n_params} parameters, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters contain non-finite values")
    return theta
