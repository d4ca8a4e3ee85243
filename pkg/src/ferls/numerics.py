"""Dense small-matrix helpers and fixed-step integrators.

Vectors and matrices are plain float64 numpy arrays. Integrators accept any
array shape, so a batch of states can be stepped in one call as long as the
vector field is vectorized the same way.
"""
import numpy as np

from . import kernels
from .errors import NonFiniteState, NotPositiveDefinite, ShapeMismatch


def as_vec(x, n=None, name="vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or (n is not None and x.shape[0] != n):
        raise ShapeMismatch(f"{name}: expected shape ({n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"{name} has non-finite entries")
    return x


def as_mat(a, shape=None, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or (shape is not None and a.shape != tuple(shape)):
        raise ShapeMismatch(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteState(f"{name} has non-finite entries")
    return a


def symmetrize(a):
    return 0.5 * (a + a.T)


def solve_spd(A, B):
    """Solve ``A X = B`` for symmetric positive-definite ``A`` by Cholesky.

    ``B`` may be a vector or a matrix; the result has the same shape.
    Raises NotPositiveDefinite when a pivot is not strictly positive.
    """
    A = as_mat(A, name="A")
    if A.shape[0] != A.shape[1]:
        raise ShapeMismatch(f"A must be square, got {A.shape}")
    B = np.asarray(B, dtype=np.float64)
    vec = B.ndim == 1
    B2 = B[:, None] if vec else B
    if B2.ndim != 2 or B2.shape[0] != A.shape[0]:
        raise ShapeMismatch(f"B rows {B2.shape} do not match A {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-10 * scale:
        raise ShapeMismatch("A is not symmetric")
    L, bad = kernels.cholesky(np.ascontiguousarray(A))
    if bad >= 0:
        raise NotPositiveDefinite(f"Cholesky pivot {bad} is not positive; add a ridge")
    X = kernels.cho_solve(L, np.ascontiguousarray(B2))
    return X[:, 0] if vec else X


def _check(x, check):
    if check and not np.all(np.isfinite(x)):
        raise NonFiniteState("integrator produced non-finite state")
    return x


def euler_step(field, x, dt, check=True):
    """One explicit Euler step ``x + dt * field(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return _check(x + dt * field(x), check)


def rk4_step(field, x, dt, check=True):
    """One classical fourth-order Runge-Kutta step.

    ``dt`` may be a scalar or an array broadcastable against ``x`` (per-sample
    step sizes).
    """
    x = np.asarray(x, dtype=np.float64)
    k1 = field(x)
    k2 = field(x + 0.5 * dt * k1)
    k3 = field(x + 0.5 * dt * k2)
    k4 = field(x + dt * k3)
    return _check(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), check)
