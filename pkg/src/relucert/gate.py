"""Exactness gate: partial exact encodings, violation-driven refinement.

The relaxation left the node open, so exact ReLU semantics are enforced on a
growing subset S of the unstable units.  Each partial exact query is decided
by a small DPLL over the 2^|S| guard assignments with an LP feasibility check
per full assignment; every infeasible branch yields a guarded Farkas
certificate, and an unsat answer returns a cover of such certificates whose
guard sets exhaust all assignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import certs as certmod
from . import lp
from .budget import Budget
from .certs import ConflictClause, FarkasCertificate, GuardedCertificate
from .model import ACTIVE, INACTIVE, Unit, validate_witness
from .store import GuardLiteral, NormalizedSystem, Store, guard_norm_rows

_ZERO = Fraction(0)

SAT = "sat"
UNSAT = "unsat"
PRUNE = "prune"
DEFER = "defer"
LIMIT = "limit"

EXACT_NON_COUNTEREXAMPLE = "exact-non-counterexample"
BUDGET = "budget"
SOLVER_LIMIT = "solver-limit"


class EmptyViolationSet(Exception):
    pass


@dataclass(frozen=True)
class ViolationReport:
    residuals: tuple[tuple[Unit, Fraction], ...]  # all units of U, sorted
    violated: frozenset[Unit]


def violation_report(point: dict[int, Fraction], layout, units) -> ViolationReport:
    """Exact ReLU residual |z - max(0, s)| per unit; V = strictly positive."""
    res = []
    bad = set()
    for unit in sorted(units):
        s = point.get(layout.pre_index(unit), _ZERO)
        z = point.get(layout.post_index(unit), _ZERO)
        r = abs(z - max(_ZERO, s))
        res.append((unit, r))
        if r > 0:
            bad.add(unit)
    return ViolationReport(tuple(res), frozenset(bad))


def select_violated(report: ViolationReport) -> set[Unit]:
    """The single unit with the largest residual; ties break on (layer, neuron)."""
    if not report.violated:
        raise EmptyViolationSet()
    best = min(
        ((unit, r) for unit, r in report.residuals if unit in report.violated),
        key=lambda ur: (-ur[1], ur[0]),
    )
    return {best[0]}


@dataclass
class ExactResult:
    status: str  # SAT | UNSAT | LIMIT
    model: dict[int, Fraction] | None = None
    assignment: dict[Unit, str] | None = None
    cover: list[GuardedCertificate] = field(default_factory=list)


def _drop_zero_guards(cert: GuardedCertificate, layout) -> GuardedCertificate:
    """Remove guards none of whose materialized rows carry a multiplier."""
    used = {rid for rid, _ in cert.inner.multipliers}
    kept = []
    for lit in cert.guards:
        rids = {r.rid for r in guard_norm_rows(layout, lit)}
        if rids & used:
            kept.append(lit)
    if len(kept) == len(cert.guards):
        return cert
    return GuardedCertificate.make(kept, cert.inner)


def minimize_core(store: Store, cert: GuardedCertificate, budget: Budget,
                  lp_shrink: bool = False) -> GuardedCertificate:
    """Greedy guard-set shrinking: free drops always, per-guard LP retries on
    request (each retry costs an LP call)."""
    cert = _drop_zero_guards(cert, store.layout)
    if not lp_shrink:
        return cert
    base = store.normalize()
    guards = list(cert.guards)
    changed = True
    while changed:
        changed = False
        for lit in list(guards):
            if not budget.lp_ok():
                return GuardedCertificate.make(guards, cert.inner)
            trial = [g for g in guards if g != lit]
            sys = certmod.extend_with_guards(base, store.layout, trial)
            budget.count_lp()
            out = lp.lp_feasible(sys)
            if out.status == lp.INFEASIBLE:
                guards = trial
                cert = GuardedCertificate.make(guards, FarkasCertificate.make(out.dual))
                cert = _drop_zero_guards(cert, store.layout)
                guards = list(cert.guards)
                changed = True
                break
    return cert


def exact_solve(store: Store, subset, learned=(), budget: Budget | None = None,
                local_limit: int | None = None) -> ExactResult:
    """DPLL over the guard assignments of the subset, LP as theory check.

    Known guarded certificates (learned clauses and branches already closed in
    this call) prune any partial assignment containing their full guard set;
    the pruning certificate joins the cover, keeping it exhaustive.
    """
    if budget is None:
        budget = Budget()
    units = sorted(subset)
    base = store.normalize()
    known: list[GuardedCertificate] = list(learned)
    cover: list[GuardedCertificate] = []
    calls = 0

    def theory(lits) -> ExactResult | None:
        nonlocal calls
        if not budget.lp_ok() or (local_limit is not None and calls >= local_limit):
            return ExactResult(LIMIT)
        budget.count_lp()
        calls += 1
        sys = certmod.extend_with_guards(base, store.layout, lits)
        out = lp.lp_feasible(sys)
        if out.status == lp.LIMIT:
            return ExactResult(LIMIT)
        if out.status == lp.INFEASIBLE:
            cert = GuardedCertificate.make(lits, FarkasCertificate.make(out.dual))
            cert = _drop_zero_guards(cert, store.layout)
            assert certmod.check_guarded(store, cert).ok
            known.append(cert)
            cover.append(cert)
            return None
        return ExactResult(SAT, model=out.primal,
                           assignment={l.unit: l.phase for l in lits})

    def solve(idx: int, lits: tuple[GuardLiteral, ...]) -> ExactResult | None:
        here = set(lits)
        for cert in known:
            if cert.guard_set <= here:
                cover.append(cert)
                return None
        if idx == len(units):
            return theory(lits)
        for phase in (ACTIVE, INACTIVE):
            r = solve(idx + 1, lits + (GuardLiteral(units[idx], phase),))
            if r is not None:
                return r
        return None

    res = solve(0, ())
    if res is not None:
        return res
    return ExactResult(UNSAT, cover=cover)


@dataclass
class GateOutcome:
    status: str  # SAT | PRUNE | DEFER
    witness: tuple[Fraction, ...] | None = None
    certificates: list[GuardedCertificate] = field(default_factory=list)
    clauses: list[ConflictClause] = field(default_factory=list)
    reason: str = ""
    refinements: int = 0
    exact_subset: frozenset[Unit] = frozenset()


def _model_violates_exactness(store: Store, model: dict[int, Fraction], unit: Unit) -> bool:
    """True iff the model falsifies both phase branches of the unit."""
    for phase in (ACTIVE, INACTIVE):
        ok = True
        for r in guard_norm_rows(store.layout, GuardLiteral(unit, phase)):
            lhs = sum((q * model.get(j, _ZERO) for j, q in r.row.items()), _ZERO)
            if lhs > r.rhs:
                ok = False
                break
        if ok:
            return False
    return True


def exactness_gate(store: Store, budget: Budget, learned=(),
                   gate_lp_limit: int | None = None,
                   minimize: bool = True) -> GateOutcome:
    """Abstraction-refinement loop over exact subsets S, starting from S = {}.

    Sat models are validated by exact forward evaluation; spurious models
    grow S by the most-violated unit, which provably eliminates them.  At
    most |U| refinements can occur.
    """
    budget.gate_calls += 1
    unstable = sorted(store.unstable)
    subset: set[Unit] = set()
    out = GateOutcome(DEFER, reason=BUDGET)
    spent = budget.lp_calls
    while True:
        remaining = None if gate_lp_limit is None else gate_lp_limit - (budget.lp_calls - spent)
        if remaining is not None and remaining <= 0:
            return GateOutcome(DEFER, reason=BUDGET, refinements=out.refinements,
                               exact_subset=frozenset(subset))
        if not budget.lp_ok():
            return GateOutcome(DEFER, reason=BUDGET, refinements=out.refinements,
                               exact_subset=frozenset(subset))
        res = exact_solve(store, subset, learned, budget, local_limit=remaining)
        if res.status == LIMIT:
            return GateOutcome(DEFER, reason=SOLVER_LIMIT, refinements=out.refinements,
                               exact_subset=frozenset(subset))
        if res.status == UNSAT:
            certs = res.cover
            if minimize:
                certs = [minimize_core(store, c, budget) for c in certs]
            return GateOutcome(PRUNE, certificates=certs, refinements=out.refinements,
                               exact_subset=frozenset(subset))
        model = res.model
        x = tuple(model.get(store.layout.input_index(k), _ZERO)
                  for k in range(store.net.input_dim))
        verdict = validate_witness(store.net, store.region, store.prop, x)
        if verdict.accepted:
            return GateOutcome(SAT, witness=x, refinements=out.refinements,
                               exact_subset=frozenset(subset))
        report = violation_report(model, store.layout, store.unstable)
        if not report.violated:
            return GateOutcome(DEFER, reason=EXACT_NON_COUNTEREXAMPLE,
                               refinements=out.refinements, exact_subset=frozenset(subset))
        picked = select_violated(report)
        if not (picked - subset):
            # exact units have zero residual, so this cannot happen; guard
            # against a non-terminating loop anyway
            return GateOutcome(DEFER, reason=SOLVER_LIMIT,
                               refinements=out.refinements, exact_subset=frozenset(subset))
        for unit in picked:
            assert _model_violates_exactness(store, model, unit)
            for cid in store.hull_ids.get(unit, []):
                store.retire(cid)
        subset |= picked
        prev_model = model
        out.refinements += 1
        assert out.refinements <= len(unstable)
