"""Hot numeric kernels for full-table Bellman sweeps.

The Bellman application dominates solver runtime, so it exists in two
forms: a numba-jitted loop nest and a vectorized pure-numpy fallback.
The active implementation is selected once, at import time, from the
``ANDERSON_PI_BACKEND`` environment variable:

    auto   -- numba when importable, numpy otherwise (default)
    numba  -- require numba; raise if it is unavailable
    numpy  -- force the pure-numpy path

Operator kinds travel as small integer codes so the jitted kernels stay
monomorphic: 0 = hard max, 1 = mellowmax, 2 = Boltzmann softmax.  All
exponentials are max-shifted, so rows with ``|omega * q|`` up to 1e6 do
not overflow.
"""

from __future__ import annotations

import math
import os

import numpy as np

HARD_MAX_CODE = 0
MELLOW_MAX_CODE = 1
BOLTZMANN_CODE = 2

_BACKEND_ENV = "ANDERSON_PI_BACKEND"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False


def _select_backend() -> str:
    choice = os.environ.get(_BACKEND_ENV, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_BACKEND_ENV} must be one of 'auto', 'numba', 'numpy'; got {choice!r}"
        )
    if choice == "numba" and not HAVE_NUMBA:
        raise ImportError(f"{_BACKEND_ENV}=numba but numba is not importable")
    if choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return choice


_BACKEND = _select_backend()


def active_backend() -> str:
    """Name of the kernel backend chosen at import time."""
    return _BACKEND


def aggregate_rows_numpy(q: np.ndarray, kind: int, omega: float) -> np.ndarray:
    """Per-state aggregate of each Q row: max, mellowmax or softmax."""
    shift = q.max(axis=1)
    if kind == HARD_MAX_CODE:
        return shift
    w = np.exp(omega * (q - shift[:, None]))
    if kind == MELLOW_MAX_CODE:
        return shift + np.log(w.sum(axis=1) / q.shape[1]) / omega
    if kind == BOLTZMANN_CODE:
        return (q * w).sum(axis=1) / w.sum(axis=1)
    raise ValueError(f"unknown operator code {kind}")


def bellman_numpy(
    p: np.ndarray, r: np.ndarray, gamma: float, q: np.ndarray, kind: int, omega: float
) -> np.ndarray:
    v = aggregate_rows_numpy(q, kind, omega)
    ns, na = q.shape
    return r + gamma * (p.reshape(ns * na, ns) @ v).reshape(ns, na)


if HAVE_NUMBA:

    @njit(cache=True)
    def _aggregate_rows_jit(q, kind, omega):
        ns, na = q.shape
        v = np.empty(ns)
        for s in range(ns):
            shift = q[s, 0]
            for a in range(1, na):
                if q[s, a] > shift:
                    shift = q[s, a]
            if kind == 0:
                v[s] = shift
            elif kind == 1:
                acc = 0.0
                for a in range(na):
                    acc += math.exp(omega * (q[s, a] - shift))
                v[s] = shift + math.log(acc / na) / omega
            else:
                num = 0.0
                den = 0.0
                for a in range(na):
                    w = math.exp(omega * (q[s, a] - shift))
                    num += q[s, a] * w
                    den += w
                v[s] = num / den
        return v

    @njit(cache=True)
    def bellman_jit(p, r, gamma, q, kind, omega):
        ns, na = q.shape
        v = _aggregate_rows_jit(q, kind, omega)
        # contiguous reshape keeps the transition contraction on BLAS
        pv = np.dot(p.reshape(ns * na, ns), v).reshape(ns, na)
        return r + gamma * pv


def bellman_apply(
    p: np.ndarray, r: np.ndarray, gamma: float, q: np.ndarray, kind: int, omega: float
) -> np.ndarray:
    """One Bellman sweep ``r + gamma * P @ aggregate(q)`` on the active backend."""
    if _BACKEND == "numba":
        return bellman_jit(p, r, gamma, q, kind, omega)
    return bellman_numpy(p, r, gamma, q, kind, omega)
