"""Bound checkers that turn the method's stability statements into data.

Each check emits :class:`BoundCheckRecord` rows with the convention
``satisfied <=> lhs <= rhs + slack``.  Checks split into an *asserted*
set (they are expected to hold and a failure is an error) and a
*report-only* set (known-loose bounds recorded as findings):

asserted:    Theta01 (gain certificates), Contraction (hard max /
             mellowmax), Prop2_1, FormEquiv, SolverEquiv, and Theorem3
             whenever its right side is at least beta.
report-only: Theorem3 with right side below beta (the bound degenerates
             near eta = 2/beta), Prop2_2 (unclear additive constant),
             and Boltzmann-softmax contraction (known to fail).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import anderson, linalg
from .mdp import TabularMdp, generate_random_mdp
from .operators import OperatorKind, OperatorSpec, apply_bellman
from .solver import Scheme, SolverConfig, SolverTrace, run

CONTRACTION_SLACK = 1e-12
THETA_SLACK = 1e-9
COEFF_BOUND_SLACK = 1e-9
UPDATE_NORM_SLACK = 1e-6
FORM_EQUIV_SLACK = 1e-8
SOLVER_EQUIV_SLACK = 1e-8
ROUNDTRIP_SLACK = 1e-14

ASSERTED_IDS = ("Theta01", "Contraction", "Prop2_1", "FormEquiv", "SolverEquiv")
REPORT_ONLY_IDS = ("Theorem3(rhs<beta)", "Prop2_2", "Contraction(softmax)")


@dataclass
class BoundCheckRecord:
    bound_id: str
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    iter: int | None
    config_hash: str
    context: str = ""
    asserted: bool = True

    def to_json(self) -> str:
        payload = {
            "bound_id": self.bound_id,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "satisfied": self.satisfied,
            "slack": self.slack,
            "iter": self.iter,
            "config_hash": self.config_hash,
            "context": self.context,
            "asserted": self.asserted,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _record(
    bound_id: str,
    lhs: float,
    rhs: float,
    slack: float,
    iter_idx: int | None,
    config_hash: str,
    context: str = "",
    asserted: bool = True,
) -> BoundCheckRecord:
    lhs = float(lhs)
    rhs = float(rhs)
    return BoundCheckRecord(
        bound_id=bound_id,
        lhs=lhs,
        rhs=rhs,
        satisfied=bool(lhs <= rhs + slack),
        slack=slack,
        iter=iter_idx,
        config_hash=config_hash,
        context=context,
        asserted=asserted,
    )


def check_contraction(
    mdp: TabularMdp, op: OperatorSpec, n_pairs: int, seed: int
) -> list[BoundCheckRecord]:
    """Sample random Q pairs and compare ||TQ - TQ'||_inf to gamma ||Q - Q'||_inf.

    Asserted for the contractive aggregators; the Boltzmann softmax is
    recorded without assertion (violations are expected findings).
    """
    rng = np.random.default_rng(seed)
    asserted = op.kind is not OperatorKind.BOLTZMANN_SOFTMAX
    tag = f"{op.label()}|seed={seed}"
    records = []
    shape = (mdp.n_states, mdp.n_actions)
    for i in range(n_pairs):
        qa = rng.uniform(-10.0, 10.0, size=shape)
        qb = rng.uniform(-10.0, 10.0, size=shape)
        lhs = float(np.abs(apply_bellman(mdp, qa, op) - apply_bellman(mdp, qb, op)).max())
        rhs = mdp.gamma * float(np.abs(qa - qb).max())
        records.append(
            _record(
                "Contraction" if asserted else "Contraction(softmax)",
                lhs,
                rhs,
                CONTRACTION_SLACK,
                i,
                tag,
                context=op.label(),
                asserted=asserted,
            )
        )
    return records


def check_update_norm_bound(
    trace: SolverTrace, eta: float, beta: float
) -> tuple[list[BoundCheckRecord], list[str]]:
    """Spectral-norm bound on the materialized update matrix.

    Needs a full-diagnostics run with eta > 0.  The bound is asserted
    only where its right side |2/eta - beta| is at least beta; smaller
    right sides (eta near 2/beta) are recorded as report-only findings.
    The companion check ||G_tilde^{-1} G||_2 < 1 runs only when both
    matrices exist without jitter; otherwise it is skipped with a
    reason.
    """
    records: list[BoundCheckRecord] = []
    skipped: list[str] = []
    rhs = abs(2.0 / eta - beta)
    asserted = rhs >= beta
    bound_id = "Theorem3" if asserted else "Theorem3(rhs<beta)"
    chash = trace.config.config_hash()
    for rec in trace.records:
        if rec.g_tilde is None:
            continue
        lhs = (
            rec.update_norm_lhs
            if rec.update_norm_lhs is not None
            else linalg.spectral_norm(rec.g_tilde)
        )
        records.append(
            _record(
                bound_id,
                lhs,
                rhs,
                UPDATE_NORM_SLACK,
                rec.k,
                chash,
                context="spectral_norm(G_tilde)",
                asserted=asserted,
            )
        )
        if rec.g_unreg is None:
            skipped.append(
                f"iter {rec.k}: unregularized update matrix unavailable "
                "(difference Gram singular at zero jitter)"
            )
            continue
        if rec.jitter > 0.0 or rec.fallback:
            skipped.append(
                f"iter {rec.k}: coefficient solve needed jitter/fallback, "
                "G_tilde not the zero-jitter matrix"
            )
            continue
        try:
            ratio = np.linalg.solve(rec.g_tilde, rec.g_unreg)
        except np.linalg.LinAlgError:
            skipped.append(f"iter {rec.k}: G_tilde singular, inverse undefined")
            continue
        records.append(
            _record(
                "Theorem3",
                linalg.spectral_norm(ratio),
                1.0,
                0.0,
                rec.k,
                chash,
                context="spectral_norm(G_tilde^-1 G)",
                asserted=False,
            )
        )
    return records, skipped


def check_coefficient_bounds(
    sol_reg: anderson.MixingSolution,
    sol_non: anderson.MixingSolution,
    e_k: np.ndarray,
    eta: float,
    m: int,
    iter_idx: int | None = None,
    config_hash: str = "",
) -> tuple[BoundCheckRecord, BoundCheckRecord]:
    """Coefficient-norm bounds for the regularized solve.

    Record 1 (asserted): ||alpha_reg||^2 <= 4 (1 + ||e_k||^2 / eta^2).
    Record 2 (report-only): the gap bound against the unregularized
    coefficients, with the transform condition number computed
    numerically.
    """
    if not eta > 0.0:
        raise ValueError("the coefficient-bound check requires eta > 0")
    e_norm2 = float(np.linalg.norm(e_k)) ** 2
    rec1 = _record(
        "Prop2_1",
        float(np.linalg.norm(sol_reg.alpha)) ** 2,
        4.0 * (1.0 + e_norm2 / eta**2),
        COEFF_BOUND_SLACK,
        iter_idx,
        config_hash,
        context=f"eta={eta:g}",
        asserted=True,
    )
    a = anderson.transformation_matrix(m)
    cond = linalg.spectral_norm(a) * linalg.spectral_norm(np.linalg.inv(a))
    rec2 = _record(
        "Prop2_2",
        float(np.linalg.norm(sol_reg.alpha - sol_non.alpha)) ** 2,
        cond**2 * float(np.linalg.norm(sol_non.alpha)) ** 2
        - (2.0 * m + 1.0) / (m + 1.0),
        0.0,
        iter_idx,
        config_hash,
        context=f"cond2(A)={cond!r}",
        asserted=False,
    )
    return rec1, rec2


def empirical_rate_report(items) -> list[dict]:
    """Fitted per-iteration contraction factors from converged traces.

    ``items`` is a sequence of (label, trace, gamma) triples.  For each
    trace the geometric-mean ratio of successive residual norms over
    the final half of the iterations is reported next to gamma, the
    mean gain, and the smallest |alpha| seen (runs whose coefficients
    approach zero are flagged, not failed).
    """
    out = []
    for label, trace, gamma in items:
        res = trace.residuals_inf()
        entry = {
            "label": label,
            "iterations": int(trace.iterations),
            "gamma": float(gamma),
            "fitted_ratio": None,
            "theta_mean": float(trace.thetas().mean()) if trace.records else None,
            "min_abs_alpha": None,
            "alpha_near_zero": False,
            "insufficient_data": False,
        }
        if len(res) < 3:
            entry["insufficient_data"] = True
            out.append(entry)
            continue
        start = len(res) // 2
        ratios = []
        for k in range(max(start, 1), len(res)):
            if res[k - 1] > 1e-300 and res[k] > 0.0:
                ratios.append(res[k] / res[k - 1])
        if ratios:
            entry["fitted_ratio"] = float(np.exp(np.mean(np.log(ratios))))
        min_alpha = min(float(np.abs(r.alpha).min()) for r in trace.records)
        entry["min_abs_alpha"] = min_alpha
        entry["alpha_near_zero"] = bool(min_alpha < 1e-6)
        out.append(entry)
    return out


def check_form_equivalence(
    mdp: TabularMdp,
    op: OperatorSpec,
    m: int,
    beta: float,
    eta: float,
    n_iters: int,
    config_hash: str = "",
) -> list[BoundCheckRecord]:
    """Per-iteration agreement of the mixing and quasi-Newton update forms.

    Evolves one trajectory by the mixing form and, at every step with at
    least two history entries, compares it against the matrix-free
    quasi-Newton step under the same coefficients.
    """
    history = anderson.AndersonHistory(m)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    records = []
    for k in range(n_iters):
        tq = apply_bellman(mdp, q, op)
        history.push(q.ravel().copy(), tq.ravel().copy())
        matrices = anderson.build_history_matrices(history)
        sol = (
            anderson.solve_tau_regularized(matrices, eta)
            if eta > 0.0
            else anderson.solve_tau_unconstrained(matrices)
        )
        nxt = anderson.mixed_update(history, sol, beta)
        if len(history) >= 2:
            qn, _ = anderson.quasi_newton_update(history, beta, eta)
            records.append(
                _record(
                    "FormEquiv",
                    float(np.abs(nxt - qn).max()),
                    0.0,
                    FORM_EQUIV_SLACK,
                    k,
                    config_hash,
                    context=f"eta={eta:g}",
                    asserted=True,
                )
            )
        q = nxt.reshape(mdp.n_states, mdp.n_actions)
    return records


def _random_history(rng: np.random.Generator, n: int, length: int):
    history = anderson.AndersonHistory(length - 1)
    for _ in range(length):
        history.push(rng.standard_normal(n), rng.standard_normal(n))
    return anderson.build_history_matrices(history)


def check_solver_equivalence(
    seed: int, n_histories: int, n: int = 40
) -> list[BoundCheckRecord]:
    """Cross-solver and transform identities on random histories.

    Emits, per history: KKT vs unconstrained alpha agreement, eta=0
    regularized vs unconstrained agreement, and the tau <-> alpha
    round-trip error.
    """
    rng = np.random.default_rng(seed)
    tag = f"seed={seed}"
    records = []
    for i in range(n_histories):
        length = 2 + i % 5
        matrices = _random_history(rng, n, length)
        kkt = anderson.solve_alpha_kkt(matrices)
        unc = anderson.solve_tau_unconstrained(matrices)
        reg0 = anderson.solve_tau_regularized(matrices, 0.0)
        records.append(
            _record(
                "SolverEquiv",
                float(np.abs(kkt.alpha - unc.alpha).max()),
                0.0,
                SOLVER_EQUIV_SLACK,
                i,
                tag,
                context="kkt_vs_unconstrained",
                asserted=not (
                    kkt.fallback or unc.fallback or kkt.jitter > 0 or unc.jitter > 0
                ),
            )
        )
        records.append(
            _record(
                "SolverEquiv",
                float(np.abs(reg0.alpha - unc.alpha).max()),
                0.0,
                1e-10,
                i,
                tag,
                context="eta0_equals_unconstrained",
                asserted=True,
            )
        )
        tau = rng.standard_normal(length - 1)
        back = anderson.alpha_to_tau(anderson.tau_to_alpha(tau))
        records.append(
            _record(
                "SolverEquiv",
                float(np.abs(back - tau).max(initial=0.0)),
                0.0,
                ROUNDTRIP_SLACK,
                i,
                tag,
                context="tau_alpha_roundtrip",
                asserted=True,
            )
        )
    return records


def theta_records(trace: SolverTrace) -> list[BoundCheckRecord]:
    """Gain certificates per iteration of a trace.

    The 2-norm certificate ||E alpha||_2 <= ||e_k||_2 must hold for every
    minimizing solver (the unit vector is always feasible); the inf-norm
    gain is capped by sqrt(n) through norm equivalence.
    """
    chash = trace.config.config_hash()
    cap = float(np.sqrt(trace.n))
    records = []
    for rec in trace.records:
        records.append(
            _record(
                "Theta01",
                rec.theta_l2,
                1.0,
                THETA_SLACK,
                rec.k,
                chash,
                context="l2_certificate",
                asserted=True,
            )
        )
        records.append(
            _record(
                "Theta01",
                rec.theta,
                cap,
                THETA_SLACK,
                rec.k,
                chash,
                context="inf_norm_cap",
                asserted=True,
            )
        )
    return records


def coefficient_bound_records(trace: SolverTrace) -> list[BoundCheckRecord]:
    """Coefficient-norm (asserted) and coefficient-gap (report-only) rows a run recorded."""
    chash = trace.config.config_hash()
    records = []
    for rec in trace.records:
        if rec.coeff_norm_lhs is not None:
            records.append(
                _record(
                    "Prop2_1",
                    rec.coeff_norm_lhs,
                    rec.coeff_norm_rhs,
                    COEFF_BOUND_SLACK,
                    rec.k,
                    chash,
                    context=f"eta={trace.config.eta:g}",
                    asserted=True,
                )
            )
        if rec.coeff_gap_lhs is not None:
            records.append(
                _record(
                    "Prop2_2",
                    rec.coeff_gap_lhs,
                    rec.coeff_gap_rhs,
                    0.0,
                    rec.k,
                    chash,
                    context="coefficient_gap",
                    asserted=False,
                )
            )
    return records


def run_check_suite(
    seed: int,
    n_pairs: int,
    eta: float,
    beta: float,
    omega: float = 5.0,
) -> tuple[list[BoundCheckRecord], list[str]]:
    """The property suite behind the ``check`` command.

    Entirely seeded: identical arguments produce identical records.
    Returns (records, skipped-reason strings).
    """
    reg_eta = eta if eta > 0.0 else 0.1
    records: list[BoundCheckRecord] = []
    skipped: list[str] = []

    small = generate_random_mdp(seed, 20, 3, 3, 1.0, 0.95)
    mid = generate_random_mdp(seed + 1, 30, 4, 3, 1.0, 0.9)

    contraction_ops = [OperatorSpec(OperatorKind.HARD_MAX)] + [
        OperatorSpec(OperatorKind.MELLOW_MAX, w) for w in (1.0, 5.0, 10.0)
    ]
    for i, op in enumerate(contraction_ops):
        records += check_contraction(small, op, n_pairs, seed + 10 + i)
    records += check_contraction(
        small, OperatorSpec(OperatorKind.BOLTZMANN_SOFTMAX, 10.0), n_pairs, seed + 20
    )

    mm = OperatorSpec(OperatorKind.MELLOW_MAX, omega)
    run_configs = [
        SolverConfig(scheme=Scheme.VANILLA_VI, operator=mm, tol=1e-10),
        SolverConfig(scheme=Scheme.ANDERSON_KKT, operator=mm, m=5, tol=1e-10),
        SolverConfig(
            scheme=Scheme.ANDERSON_UNCONSTRAINED, operator=mm, m=3, tol=1e-10
        ),
        SolverConfig(
            scheme=Scheme.STABLE_AA, operator=mm, m=5, eta=reg_eta, tol=1e-10
        ),
    ]
    for cfg in run_configs:
        trace = run(mid, cfg)
        records += theta_records(trace)
        records += coefficient_bound_records(trace)

    records += check_form_equivalence(
        mid, mm, m=3, beta=beta, eta=0.0, n_iters=20, config_hash=f"seed={seed + 1}"
    )
    records += check_form_equivalence(
        mid,
        mm,
        m=3,
        beta=beta,
        eta=reg_eta,
        n_iters=20,
        config_hash=f"seed={seed + 1}",
    )

    records += check_solver_equivalence(seed + 30, min(n_pairs, 200))

    t3_cfg = SolverConfig(
        scheme=Scheme.STABLE_AA,
        operator=mm,
        m=5,
        beta=beta,
        eta=reg_eta,
        tol=1e-10,
        diagnostics_level="full",
    )
    t3_trace = run(small, t3_cfg)
    t3_records, t3_skipped = check_update_norm_bound(t3_trace, reg_eta, beta)
    records += t3_records
    skipped += t3_skipped
    records += coefficient_bound_records(t3_trace)
    records += theta_records(t3_trace)
    return records, skipped


def write_check_report(
    records: list[BoundCheckRecord],
    path,
    skipped: list[str] | None = None,
    extra_header: dict | None = None,
) -> None:
    """JSON-lines report: one header object, then one object per record."""
    header = {
        "kind": "header",
        "asserted": list(ASSERTED_IDS) + ["Theorem3 (when rhs >= beta)"],
        "report_only": list(REPORT_ONLY_IDS),
    }
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    lines += [r.to_json() for r in records]
    for reason in skipped or []:
        lines.append(
            json.dumps(
                {"kind": "skipped", "reason": reason},
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
