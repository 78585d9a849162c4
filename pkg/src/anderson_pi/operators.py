"""Action-aggregation operators and the tabular Bellman map.

A Q table is a plain ``(n_states, n_actions)`` float array.  The three
row aggregators share the interface ``row -> scalar``:

* ``hard_max``          -- plain maximum,
* ``mellowmax``         -- log-average-exp, interpolating between the
                           mean (omega -> 0) and the max (omega -> inf);
                           non-expansive and differentiable,
* ``boltzmann_softmax`` -- exp-weighted average; NOT non-expansive in
                           general, kept for comparison runs.

``apply_bellman`` lifts the chosen aggregator to the full table:
``(TQ)[s, a] = R[s, a] + gamma * sum_t P[s, a, t] * agg(Q[t, :])``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mdp import TabularMdp


class OperatorKind(enum.Enum):
    HARD_MAX = "max"
    MELLOW_MAX = "mellowmax"
    BOLTZMANN_SOFTMAX = "softmax"


_KIND_CODE = {
    OperatorKind.HARD_MAX: _kernels.HARD_MAX_CODE,
    OperatorKind.MELLOW_MAX: _kernels.MELLOW_MAX_CODE,
    OperatorKind.BOLTZMANN_SOFTMAX: _kernels.BOLTZMANN_CODE,
}

CONTRACTIVE_KINDS = (OperatorKind.HARD_MAX, OperatorKind.MELLOW_MAX)


@dataclass(frozen=True)
class OperatorSpec:
    """Aggregator choice plus its inverse-temperature omega.

    omega is a fixed per-run constant (never solved per state) and is
    ignored by the hard max.
    """

    kind: OperatorKind
    omega: float = 1.0

    def __post_init__(self):
        if self.kind is not OperatorKind.HARD_MAX and not self.omega > 0.0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    def label(self) -> str:
        if self.kind is OperatorKind.HARD_MAX:
            return self.kind.value
        return f"{self.kind.value}(omega={self.omega:g})"


def _check_row(row) -> np.ndarray:
    arr = np.asarray(row, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("row must be a nonempty 1-D vector")
    return arr


def hard_max(row) -> float:
    return float(np.max(_check_row(row)))


def mellowmax(row, omega: float) -> float:
    """(1/omega) * log(mean(exp(omega * row))), max-shifted for stability.

    Always lies between min(row) and max(row).
    """
    arr = _check_row(row)
    if not omega > 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    shift = arr.max()
    return float(shift + np.log(np.exp(omega * (arr - shift)).mean()) / omega)


def mellowmax_grad(row, omega: float) -> np.ndarray:
    """Analytic gradient of mellowmax: the softmax weights exp(omega*x_i)/sum.

    A probability vector: nonnegative entries summing to one.
    """
    arr = _check_row(row)
    if not omega > 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    w = np.exp(omega * (arr - arr.max()))
    return w / w.sum()


def boltzmann_softmax(row, omega: float) -> float:
    """sum_i row_i * exp(omega*row_i) / sum_i exp(omega*row_i), max-shifted."""
    arr = _check_row(row)
    if not omega > 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    w = np.exp(omega * (arr - arr.max()))
    return float((arr * w).sum() / w.sum())


def aggregate(row, op: OperatorSpec) -> float:
    if op.kind is OperatorKind.HARD_MAX:
        return hard_max(row)
    if op.kind is OperatorKind.MELLOW_MAX:
        return mellowmax(row, op.omega)
    return boltzmann_softmax(row, op.omega)


def _check_q(mdp: TabularMdp, q) -> np.ndarray:
    arr = np.asarray(q, dtype=np.float64)
    if arr.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"Q shape {arr.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )
    if not np.isfinite(arr).all():
        raise ValueError("Q contains non-finite entries")
    return arr


def apply_bellman(mdp: TabularMdp, q, op: OperatorSpec) -> np.ndarray:
    """One Bellman sweep; the input Q is never modified."""
    arr = _check_q(mdp, q)
    return _kernels.bellman_apply(
        mdp.transitions, mdp.rewards, mdp.gamma, arr, op.code, op.omega
    )


def residual(mdp: TabularMdp, q, op: OperatorSpec) -> np.ndarray:
    """Fixed-point residual TQ - Q, elementwise."""
    arr = _check_q(mdp, q)
    return apply_bellman(mdp, arr, op) - arr


def greedy_policy(q) -> np.ndarray:
    """Argmax action per state; ties break toward the lowest index."""
    arr = np.asarray(q, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("Q contains non-finite entries")
    return np.argmax(arr, axis=1)
