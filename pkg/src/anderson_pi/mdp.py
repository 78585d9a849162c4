"""Finite tabular MDPs: construction, generators, validation, JSON persistence.

A :class:`TabularMdp` bundles the transition tensor ``P[s, a, s']``, the
reward table ``R[s, a]`` and the discount.  Instances are immutable after
construction (the arrays are frozen), so they can be shared freely across
concurrent solver runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PROB_SUM_TOL = 1e-12

_FILE_KEYS = ("n_states", "n_actions", "gamma", "rewards", "transitions")


class MdpFormatError(ValueError):
    """An MDP file violates the on-disk schema."""


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with dense transitions, rewards and a discount factor.

    Structural problems (wrong shapes, non-positive sizes) fail at
    construction; probabilistic invariants are reported by
    :func:`validate` so that broken instances can still be inspected.
    """

    n_states: int
    n_actions: int
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError(
                f"n_states and n_actions must be positive, got "
                f"({self.n_states}, {self.n_actions})"
            )
        p = _frozen(self.transitions)
        r = _frozen(self.rewards)
        expected_p = (self.n_states, self.n_actions, self.n_states)
        expected_r = (self.n_states, self.n_actions)
        if p.shape != expected_p:
            raise ValueError(f"transitions shape {p.shape} != {expected_p}")
        if r.shape != expected_r:
            raise ValueError(f"rewards shape {r.shape} != {expected_r}")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_entries(self) -> int:
        return self.n_states * self.n_actions


def validate(mdp: TabularMdp) -> list[str]:
    """Return the list of violated invariants (empty means valid).

    Never mutates or raises; every violation names the offending field
    and indices.
    """
    violations: list[str] = []
    if not np.isfinite(mdp.gamma) or not (0.0 <= mdp.gamma < 1.0):
        violations.append(f"discount not in [0,1): gamma={mdp.gamma!r}")
    bad_r = np.argwhere(~np.isfinite(mdp.rewards))
    for s, a in bad_r:
        violations.append(f"reward (s={s}, a={a}) is not finite")
    p = mdp.transitions
    finite = np.isfinite(p)
    in_range = finite & (p >= 0.0) & (p <= 1.0)
    for s, a, t in np.argwhere(~in_range):
        violations.append(
            f"transition (s={s}, a={a}, s'={t}) = {p[s, a, t]!r} outside [0,1]"
        )
    with np.errstate(invalid="ignore"):
        sums = p.sum(axis=2)
    bad_rows = np.argwhere(~(np.abs(sums - 1.0) <= PROB_SUM_TOL))
    for s, a in bad_rows:
        violations.append(
            f"transition row (s={s}, a={a}) sums to {sums[s, a]!r}, "
            f"expected 1 within {PROB_SUM_TOL}"
        )
    return violations


def generate_random_mdp(
    seed: int,
    n_states: int,
    n_actions: int,
    branching: int,
    reward_scale: float = 1.0,
    gamma: float = 0.95,
) -> TabularMdp:
    """Random MDP where every (s, a) supports exactly ``branching`` successors.

    Fully deterministic given the arguments: the same seed produces
    bitwise-identical tensors.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError(f"need n_states, n_actions >= 1, got ({n_states}, {n_actions})")
    if not (1 <= branching <= n_states):
        raise ValueError(f"branching must be in [1, n_states], got {branching}")
    rng = np.random.default_rng(seed)
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=branching, replace=False)
            # strictly positive so the support size is exactly `branching`
            weights = 0.5 * (1.0 + rng.random(branching))
            p[s, a, support] = weights / weights.sum()
    rewards = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return TabularMdp(n_states, n_actions, p, rewards, gamma)


def generate_gridworld(
    width: int,
    height: int,
    slip_prob: float,
    goal_reward: float,
    gamma: float,
) -> TabularMdp:
    """Grid navigation MDP with slip noise and an absorbing goal.

    States are indexed ``s = y * width + x`` with y=0 the bottom row.
    Actions: 0=up, 1=right, 2=down, 3=left.  The intended move succeeds
    with probability ``1 - slip_prob``; otherwise one of the other three
    directions is taken uniformly.  Moves off the grid stay in place.
    The goal is the top-right corner: entering it pays ``goal_reward``,
    and it is absorbing with zero continuing reward.
    """
    if width < 1 or height < 1:
        raise ValueError(f"grid dimensions must be >= 1, got ({width}, {height})")
    if not (0.0 <= slip_prob < 1.0):
        raise ValueError(f"slip_prob must be in [0,1), got {slip_prob}")
    n_states = width * height
    n_actions = 4
    goal = (height - 1) * width + (width - 1)
    moves = ((0, 1), (1, 0), (0, -1), (-1, 0))  # up, right, down, left as (dx, dy)
    p = np.zeros((n_states, n_actions, n_states))
    r = np.zeros((n_states, n_actions))
    for y in range(height):
        for x in range(width):
            s = y * width + x
            if s == goal:
                p[s, :, s] = 1.0
                continue
            for a in range(n_actions):
                for d, (dx, dy) in enumerate(moves):
                    prob = (1.0 - slip_prob) if d == a else slip_prob / 3.0
                    if prob == 0.0:
                        continue
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < width and 0 <= ny < height:
                        t = ny * width + nx
                    else:
                        t = s
                    p[s, a, t] += prob
                r[s, a] = goal_reward * p[s, a, goal]
    return TabularMdp(n_states, n_actions, p, r, gamma)


def _fmt(x: float) -> str:
    # 17 significant decimal digits round-trip any IEEE double exactly
    return format(float(x), ".17g")


def save_mdp(mdp: TabularMdp, path) -> None:
    """Write ``mdp`` as a JSON document with 17-significant-digit reals."""
    violations = validate(mdp)
    if violations:
        raise ValueError("cannot save invalid MDP: " + "; ".join(violations))
    rewards_rows = [
        "[" + ", ".join(_fmt(v) for v in row) + "]" for row in mdp.rewards
    ]
    trans_blocks = []
    for s in range(mdp.n_states):
        rows = [
            "[" + ", ".join(_fmt(v) for v in mdp.transitions[s, a]) + "]"
            for a in range(mdp.n_actions)
        ]
        trans_blocks.append("[" + ", ".join(rows) + "]")
    text = (
        "{\n"
        f'  "n_states": {mdp.n_states},\n'
        f'  "n_actions": {mdp.n_actions},\n'
        f'  "gamma": {_fmt(mdp.gamma)},\n'
        '  "rewards": [\n    '
        + ",\n    ".join(rewards_rows)
        + "\n  ],\n"
        '  "transitions": [\n    '
        + ",\n    ".join(trans_blocks)
        + "\n  ]\n"
        "}\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _as_array(data, name: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MdpFormatError(f"field '{name}': not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise MdpFormatError(
            f"field '{name}': dimension mismatch, expected {shape}, got {arr.shape}"
        )
    return arr


def load_mdp(path) -> TabularMdp:
    """Parse an MDP file, rejecting schema violations with field context."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpFormatError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(data, dict):
        raise MdpFormatError("top-level value must be an object")
    missing = [k for k in _FILE_KEYS if k not in data]
    if missing:
        raise MdpFormatError(f"missing key(s): {', '.join(missing)}")
    extra = [k for k in data if k not in _FILE_KEYS]
    if extra:
        raise MdpFormatError(f"unexpected key(s): {', '.join(sorted(extra))}")
    for name in ("n_states", "n_actions"):
        if not isinstance(data[name], int) or isinstance(data[name], bool):
            raise MdpFormatError(f"field '{name}': must be an integer")
        if data[name] < 1:
            raise MdpFormatError(f"field '{name}': must be positive, got {data[name]}")
    if isinstance(data["gamma"], bool) or not isinstance(data["gamma"], (int, float)):
        raise MdpFormatError("field 'gamma': must be a number")
    ns, na = data["n_states"], data["n_actions"]
    rewards = _as_array(data["rewards"], "rewards", (ns, na))
    transitions = _as_array(data["transitions"], "transitions", (ns, na, ns))
    mdp = TabularMdp(ns, na, transitions, rewards, float(data["gamma"]))
    violations = validate(mdp)
    if violations:
        raise MdpFormatError("; ".join(violations))
    return mdp
