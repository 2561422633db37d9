"""Search drivers: worklist management, refinement, and cross-node learning.

Two schedules share the same machinery.  The incremental driver closes nodes
by propagation or the exactness gate; the hybrid driver additionally tries a
relaxation-only margin bound before going exact.  Both assemble a proof tree
of split annotations and certificate-carrying leaves, learn merged lemmas at
sibling joins, and learn conflict clauses from guarded infeasibility cores.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from . import lp
from .budget import Budget
from .certs import ConflictClause, DualBoundCertificate, GuardedCertificate
from .gate import (
    BUDGET,
    DEFER,
    LIMIT,
    PRUNE,
    SAT,
    UNSAT,
    exact_solve,
    exactness_gate,
)
from .model import (
    ACTIVE,
    INACTIVE,
    Network,
    Region,
    SafetyProperty,
    Unit,
    build_layout,
    trace_vector,
    validate_witness,
)
from .propagate import propagate_node
from .store import NEGP, GuardLiteral, Store, build_initial_store

_ZERO = Fraction(0)
_HALF = Fraction(1, 2)


class NothingToSplit(Exception):
    pass


class MissingChildCertificate(Exception):
    pass


class CapExceeded(Exception):
    pass


# -- configuration ----------------------------------------------------------


@dataclass
class Config:
    strategy: str = "icl"  # "icl" | "hsrv"
    max_depth: int = 64
    lp_budget: int | None = None
    gate_budget: int | None = None  # LP theory calls per gate invocation
    templates: str = "default"  # "default" | "margin-only"
    workers: int = 1
    first_split: str | None = None  # "domain" forces a root domain split
    merge: bool = True
    oracle_cap: int = 12


# -- proof tree -------------------------------------------------------------


def snapshot_store(store: Store):
    """All rows by value (retired included; they stay valid consequences),
    together with the region the store was built over."""
    out = []
    for cid, c in store.all_constraints():
        out.append((cid, tuple(sorted(c.row.items())), c.relation, c.rhs,
                    c.block, c.derivation))
    return (store.region, tuple(out))


@dataclass
class ProofLeaf:
    kind: str  # "infeasible" | "bound"
    snapshot_id: int  # snapshot for the bound certificate / default for cover
    region: Region
    alpha: dict[Unit, str]
    # each cover certificate is checked against its own snapshot (reused
    # clause certificates keep pointing at the store they were derived in)
    cover: list[tuple[GuardedCertificate, int]] = field(default_factory=list)
    bound_cert: DualBoundCertificate | None = None
    beta: Fraction | None = None


@dataclass
class ProofSplit:
    kind: tuple  # ("phase", unit) | ("domain", dim, midpoint)
    region: Region
    alpha: dict[Unit, str]
    children: list = field(default_factory=lambda: [None, None])


@dataclass
class MergeJustification:
    template: tuple[tuple[int, Fraction], ...]
    children: list  # (region, alpha, beta, evidence, snapshot_id|None)
    beta: Fraction  # max of the children's bounds


@dataclass
class LemmaEntry:
    lemma_id: int
    row: tuple[tuple[int, Fraction], ...]
    bound: Fraction
    justification: object  # MergeJustification | DualBoundCertificate
    region: Region
    alpha: dict[Unit, str]
    is_global: bool


class LemmaStore:
    """Append-only; every entry carries a checkable justification."""

    def __init__(self):
        self.entries: list[LemmaEntry] = []

    def append(self, entry: LemmaEntry):
        self.entries.append(entry)

    def global_entries(self):
        return [e for e in self.entries if e.is_global]


@dataclass
class ClauseEntry:
    clause: ConflictClause
    literals: frozenset[GuardLiteral]
    cert: GuardedCertificate
    snapshot_id: int


class ClauseDB:
    def __init__(self):
        self.entries: list[ClauseEntry] = []

    def append(self, entry: ClauseEntry):
        self.entries.append(entry)

    def blocking(self, alpha: dict[Unit, str]) -> ClauseEntry | None:
        lits = {GuardLiteral(u, p) for u, p in alpha.items()}
        for e in self.entries:
            if e.literals <= lits:
                return e
        return None


@dataclass
class RunProof:
    region: Region
    root: object = None  # ProofLeaf | ProofSplit
    snapshots: dict[int, tuple] = field(default_factory=dict)
    lemmas: list[LemmaEntry] = field(default_factory=list)

    def add_snapshot(self, snap) -> int:
        sid = len(self.snapshots)
        self.snapshots[sid] = snap
        return sid


@dataclass
class VerifyResult:
    status: str  # "sat" | "unsat" | "unknown"
    witness: tuple[Fraction, ...] | None = None
    trace: dict[int, Fraction] | None = None
    proof: RunProof | None = None
    reason: str = ""
    budget: Budget | None = None


# -- refinement -------------------------------------------------------------


@dataclass
class _Node:
    region: Region
    alpha: dict[Unit, str]
    depth: int
    parent: "_Node | None" = None
    child_index: int = 0
    split: ProofSplit | None = None  # set when this node was split
    closed_children: int = 0
    child_evidence: list = field(default_factory=lambda: [None, None])


def pick_split(store: Store, node: _Node, config: Config) -> tuple:
    """Phase split on the widest-straddling unit; domain split otherwise."""
    if store.unstable:
        unit = min(store.unstable,
                   key=lambda u: (-min(-store.bounds.pre[u][0], store.bounds.pre[u][1]), u))
        return ("phase", unit)
    return _domain_split(node.region)


def _domain_split(region: Region) -> tuple:
    widths = [hi - lo for lo, hi in zip(region.lower, region.upper)]
    dim = max(range(len(widths)), key=lambda k: (widths[k], -k))
    if widths[dim] == 0:
        raise NothingToSplit()
    mid = (region.lower[dim] + region.upper[dim]) * _HALF
    return ("domain", dim, mid)


def refine(node: _Node, split: tuple) -> list[_Node]:
    if split[0] == "phase":
        unit = split[1]
        kids = []
        for idx, phase in enumerate((ACTIVE, INACTIVE)):
            alpha = dict(node.alpha)
            alpha[unit] = phase
            kids.append(_Node(node.region, alpha, node.depth + 1, node, idx))
        return kids
    _, dim, mid = split
    kids = []
    for idx, (lo, hi) in enumerate(((node.region.lower[dim], mid),
                                    (mid, node.region.upper[dim]))):
        lower = list(node.region.lower)
        upper = list(node.region.upper)
        lower[dim], upper[dim] = lo, hi
        kids.append(_Node(Region(tuple(lower), tuple(upper)), dict(node.alpha),
                          node.depth + 1, node, idx))
    return kids


# -- merge learning ---------------------------------------------------------


def merge_lemma(template: dict[int, Fraction], children, lemmas: LemmaStore,
                parent_region: Region, parent_alpha: dict[Unit, str],
                root_region: Region, budget: Budget) -> LemmaEntry:
    """Combine two sibling bound results into a parent lemma g^T v <= max(beta)."""
    g = tuple(sorted(template.items()))
    for _, _, beta, evidence, _ in children:
        if evidence is None or beta is None:
            raise MissingChildCertificate()
        if isinstance(evidence, DualBoundCertificate) and evidence.objective != g:
            raise MissingChildCertificate(f"template mismatch: {evidence.objective} != {g}")
    beta = max(c[2] for c in children)
    is_global = parent_region == root_region and not parent_alpha
    entry = LemmaEntry(len(lemmas.entries), g, beta,
                       MergeJustification(g, list(children), beta),
                       parent_region, dict(parent_alpha), is_global)
    lemmas.append(entry)
    budget.lemmas += 1
    return entry


# -- the drivers ------------------------------------------------------------


def _margin_evidence(store: Store, budget: Budget):
    """Best provable margin upper bound ignoring the negated property row."""
    if not budget.lp_ok():
        return None
    sys = store.normalize(exclude=lambda cid, c: c.block == NEGP)
    budget.count_lp()
    g = {store.layout.margin_index: Fraction(1)}
    out = lp.lp_max(sys, g)
    if out.status != lp.OPTIMAL:
        return None
    cert = DualBoundCertificate.make(g, out.value, out.dual)
    return out.value, cert


def _close(run: RunProof, node: _Node, leaf: ProofLeaf, evidence,
           lemmas: LemmaStore, config: Config, budget: Budget,
           root_region: Region, layout):
    """Attach a closed leaf, then walk up merging at completed sibling joins."""
    if node.parent is None:
        run.root = leaf
    else:
        node.parent.split.children[node.child_index] = leaf
    cur = node
    while cur.parent is not None:
        parent = cur.parent
        parent.child_evidence[cur.child_index] = evidence
        parent.closed_children += 1
        if parent.closed_children < 2:
            break
        evidence = None
        if config.merge and all(e is not None for e in parent.child_evidence):
            g = {layout.margin_index: Fraction(1)}
            entry = merge_lemma(g, list(parent.child_evidence), lemmas,
                                parent.region, parent.alpha, root_region, budget)
            evidence = (parent.region, dict(parent.alpha), entry.bound,
                        entry.justification, None)
        cur = parent


def _run(net: Network, region: Region, prop: SafetyProperty, config: Config) -> VerifyResult:
    layout = build_layout(net, prop)
    budget = Budget(lp_limit=config.lp_budget)
    lemmas = LemmaStore()
    clauses = ClauseDB()
    run = RunProof(region)
    run.lemmas = lemmas.entries
    root = _Node(region, {}, 0)
    stack = [root]

    def close_leaf(node: _Node, leaf: ProofLeaf, evidence):
        _close(run, node, leaf, evidence, lemmas, config, budget, region, layout)

    def attach_split(node: _Node, split: tuple):
        budget.splits += 1
        sp = ProofSplit(split, node.region, dict(node.alpha))
        node.split = sp
        if node.parent is None:
            run.root = sp
        else:
            node.parent.split.children[node.child_index] = sp
        stack.extend(reversed(refine(node, split)))

    while stack:
        node = stack.pop()
        if config.first_split == "domain" and node.depth == 0:
            attach_split(node, _domain_split(node.region))
            continue
        blocked = clauses.blocking(node.alpha)
        if blocked is not None:
            leaf = ProofLeaf("infeasible", blocked.snapshot_id, node.region,
                             dict(node.alpha),
                             cover=[(blocked.cert, blocked.snapshot_id)])
            close_leaf(node, leaf, None)
            continue
        store = build_initial_store(net, layout, node.region, prop, node.alpha, lemmas)
        res = propagate_node(store, lemmas, budget, templates=config.templates)
        if res.exhausted:
            return VerifyResult("unknown", reason="resource", budget=budget)
        if res.status == "prune":
            if config.strategy == "hsrv":
                # relaxation prune test first: a margin bound below the
                # violation threshold closes the node without the Farkas leaf
                ev = _margin_evidence(store, budget)
                if ev is not None and ev[0] < prop.violation_threshold:
                    sid = run.add_snapshot(snapshot_store(store))
                    beta, cert = ev
                    leaf = ProofLeaf("bound", sid, node.region, dict(node.alpha),
                                     bound_cert=cert, beta=beta)
                    close_leaf(node, leaf,
                               (node.region, dict(node.alpha), beta, cert, sid))
                    continue
            sid = run.add_snapshot(snapshot_store(store))
            cert = GuardedCertificate.make((), res.farkas)
            leaf = ProofLeaf("infeasible", sid, node.region, dict(node.alpha),
                             cover=[(cert, sid)])
            if node.alpha and node.region == region:
                lits = frozenset(GuardLiteral(u, p) for u, p in node.alpha.items())
                cl = ConflictClause(lits, len(clauses.entries))
                clauses.append(ClauseEntry(cl, lits, cert, sid))
                budget.clauses += 1
            close_leaf(node, leaf, _leaf_evidence(node, store, budget, sid))
            continue
        # relaxation margin bound: hybrid schedule prunes on it directly
        ev = _margin_evidence(store, budget)
        if config.strategy == "hsrv" and ev is not None and ev[0] < prop.violation_threshold:
            sid = run.add_snapshot(snapshot_store(store))
            beta, cert = ev
            leaf = ProofLeaf("bound", sid, node.region, dict(node.alpha),
                             bound_cert=cert, beta=beta)
            close_leaf(node, leaf,
                       (node.region, dict(node.alpha), beta, cert, sid))
            continue
        # witness extraction from the relaxation point
        if res.feasible_point is not None:
            x = tuple(res.feasible_point.get(layout.input_index(k), _ZERO)
                      for k in range(net.input_dim))
            if validate_witness(net, node.region, prop, x).accepted:
                return VerifyResult("sat", witness=x,
                                    trace=trace_vector(net, layout, x, prop),
                                    budget=budget)
        # exact reasoning
        foreign = _clause_certs(clauses, node.alpha)
        if config.strategy == "hsrv":
            if not budget.lp_ok():
                return VerifyResult("unknown", reason="resource", budget=budget)
            budget.gate_calls += 1
            er = exact_solve(store, store.unstable, list(foreign), budget,
                             local_limit=config.gate_budget)
            outcome_kind, outcome = _from_exact(er, store, net, node, prop)
        else:
            g = exactness_gate(store, budget, list(foreign),
                               gate_lp_limit=config.gate_budget)
            if g.status == SAT:
                outcome_kind, outcome = SAT, g.witness
            elif g.status == PRUNE:
                outcome_kind, outcome = PRUNE, g.certificates
            else:
                outcome_kind, outcome = DEFER, g.reason
        if outcome_kind == SAT:
            return VerifyResult("sat", witness=outcome,
                                trace=trace_vector(net, layout, outcome, prop),
                                budget=budget)
        if outcome_kind == PRUNE:
            sid = run.add_snapshot(snapshot_store(store))
            leaf = ProofLeaf("infeasible", sid, node.region, dict(node.alpha),
                             cover=[(c, foreign.get(c, sid)) for c in outcome])
            if node.region == region:
                for cert in outcome:
                    lits = frozenset(GuardLiteral(u, p) for u, p in node.alpha.items())
                    lits |= cert.guard_set
                    if lits:
                        cl = ConflictClause(lits, len(clauses.entries))
                        clauses.append(ClauseEntry(cl, lits, cert,
                                                   foreign.get(cert, sid)))
                        budget.clauses += 1
            close_leaf(node, leaf, _leaf_evidence(node, store, budget, sid, ev))
            continue
        if outcome_kind == DEFER and outcome == BUDGET and not budget.lp_ok():
            return VerifyResult("unknown", reason="resource", budget=budget)
        # refine
        if node.depth >= config.max_depth:
            return VerifyResult("unknown", reason="depth", budget=budget)
        try:
            split = pick_split(store, node, config)
        except NothingToSplit:
            return VerifyResult("unknown", reason="nothing-to-split", budget=budget)
        attach_split(node, split)
    return VerifyResult("unsat", proof=run, budget=budget)


def _leaf_evidence(node: _Node, store: Store, budget: Budget, sid: int, ev=None):
    """Margin evidence for merging, computed at close time."""
    if ev is None:
        ev = _margin_evidence(store, budget)
    if ev is None:
        return None
    return (node.region, dict(node.alpha), ev[0], ev[1], sid)


def _clause_certs(clauses: ClauseDB, alpha: dict[Unit, str]):
    """Clause certificates usable for Boolean pruning below this node,
    mapped back to the snapshot each was derived in."""
    lits = {GuardLiteral(u, p) for u, p in alpha.items()}
    out: dict[GuardedCertificate, int] = {}
    for e in clauses.entries:
        extra = e.literals - lits
        cert = GuardedCertificate.make(sorted(extra, key=lambda g: (g.unit, g.phase)),
                                       e.cert.inner)
        out.setdefault(cert, e.snapshot_id)
    return out


def _from_exact(er, store: Store, net: Network, node: _Node, prop: SafetyProperty):
    """Map a full exact-solve answer onto gate-style outcomes."""
    if er.status == UNSAT:
        return PRUNE, er.cover
    if er.status == SAT:
        x = tuple(er.model.get(store.layout.input_index(k), _ZERO)
                  for k in range(net.input_dim))
        if validate_witness(net, node.region, prop, x).accepted:
            return SAT, x
        return DEFER, ""
    return DEFER, LIMIT


def icl_verify(net: Network, region: Region, prop: SafetyProperty,
               config: Config | None = None) -> VerifyResult:
    config = config or Config()
    config = Config(**{**config.__dict__, "strategy": "icl"})
    return _run(net, region, prop, config)


def hsrv_verify(net: Network, region: Region, prop: SafetyProperty,
                config: Config | None = None) -> VerifyResult:
    config = config or Config()
    config = Config(**{**config.__dict__, "strategy": "hsrv"})
    return _run(net, region, prop, config)


# -- ground-truth oracle ----------------------------------------------------


def oracle_verify(net: Network, region: Region, prop: SafetyProperty,
                  cap: int = 12) -> VerifyResult:
    """Enumerate every total phase assignment of the root-unstable units and
    LP-solve the resulting purely linear system.  Ground truth for tests."""
    from .store import interval_bounds

    layout = build_layout(net, prop)
    bounds = interval_bounds(net, region, {})
    free: list[Unit] = []
    fixed: dict[Unit, str] = {}
    for unit in net.hidden_units:
        lo, hi = bounds[unit]
        if lo >= 0:
            fixed[unit] = ACTIVE
        elif hi <= 0:
            fixed[unit] = INACTIVE
        else:
            free.append(unit)
    free.sort()
    if len(free) > cap:
        raise CapExceeded(f"{len(free)} unstable units exceed cap {cap}")
    budget = Budget()
    for phases in itertools.product((ACTIVE, INACTIVE), repeat=len(free)):
        alpha = dict(fixed)
        alpha.update(zip(free, phases))
        store = build_initial_store(net, layout, region, prop, alpha)
        budget.count_lp()
        out = lp.lp_feasible(store.normalize())
        if out.status != lp.FEASIBLE:
            continue
        x = tuple(out.primal.get(layout.input_index(k), _ZERO)
                  for k in range(net.input_dim))
        verdict = validate_witness(net, region, prop, x)
        assert verdict.accepted, f"exact assignment produced invalid witness: {verdict.reason}"
        return VerifyResult("sat", witness=x, trace=trace_vector(net, layout, x, prop),
                            budget=budget)
    return VerifyResult("unsat", budget=budget)
