import random
from fractions import Fraction as F

from conftest import layout_of, worked_network, worked_prop, worked_region
from relucert import certs
from relucert.certs import (
    ConflictClause,
    DualBoundCertificate,
    FarkasCertificate,
    GuardedCertificate,
    check_dual,
    check_farkas,
    check_guarded,
    derive_conflict_clause,
    extend_with_guards,
)
from relucert.model import ACTIVE, INACTIVE
from relucert.store import GuardLiteral, NormRow, NormalizedSystem, build_initial_store


def _sys(rows):
    n = max((j for row, _ in rows for j in row), default=-1) + 1
    return NormalizedSystem(
        [NormRow(dict(row), F(rhs), ("c", i, "le")) for i, (row, rhs) in enumerate(rows)], n)


def hand_infeasible_system():
    """z1 <= 1, -z2 <= 0, -z1 + z2 + y <= 0, -y <= -11/10 over v = (z1, z2, y).

    Infeasible: chaining gives y <= z1 <= 1, yet the last row demands
    y >= 11/10.  The all-ones multiplier vector refutes it.
    """
    return _sys([
        ({0: F(1)}, F(1)),
        ({1: F(-1)}, F(0)),
        ({0: F(-1), 1: F(1), 2: F(1)}, F(0)),
        ({2: F(-1)}, F(-11, 10)),
    ])


ALL_ONES = FarkasCertificate.make({("c", i, "le"): F(1) for i in range(4)})


class TestFarkasChecker:
    def test_all_ones_vector_accepted(self):
        assert check_farkas(hand_infeasible_system(), ALL_ONES).ok

    def test_combination_values_are_exact(self):
        sys = hand_infeasible_system()
        combo, rhs = certs._combine(sys, ALL_ONES.multipliers)
        assert combo == {}
        assert rhs == F(-1, 10)

    def test_negative_multiplier_rejected(self):
        bad = FarkasCertificate.make({("c", 0, "le"): F(-1)})
        res = check_farkas(hand_infeasible_system(), bad)
        assert not res.ok and "negative" in res.reason

    def test_nonzero_combination_rejected(self):
        bad = FarkasCertificate.make({("c", 0, "le"): F(1)})
        res = check_farkas(hand_infeasible_system(), bad)
        assert not res.ok and res.reason == "lambda^T A != 0"

    def test_nonnegative_rhs_rejected(self):
        # dropping the last row flips lambda^T b to +1 >= 0
        sys = _sys([
            ({0: F(1)}, F(1)),
            ({0: F(-1)}, F(0)),
        ])
        bad = FarkasCertificate.make({("c", 0, "le"): F(1), ("c", 1, "le"): F(1)})
        res = check_farkas(sys, bad)
        assert not res.ok and "not < 0" in res.reason

    def test_unknown_row_rejected(self):
        bad = FarkasCertificate.make({("c", 99, "le"): F(1)})
        res = check_farkas(hand_infeasible_system(), bad)
        assert not res.ok and "unknown row" in res.reason


class TestDualChecker:
    def _bound_system(self):
        # x <= 2 and y - x <= 1 prove y <= 3
        return _sys([({0: F(1)}, F(2)), ({1: F(1), 0: F(-1)}, F(1))])

    def test_valid_bound_accepted(self):
        cert = DualBoundCertificate.make(
            {1: F(1)}, F(3), {("c", 0, "le"): F(1), ("c", 1, "le"): F(1)})
        assert check_dual(self._bound_system(), cert).ok

    def test_slack_in_the_bound_is_allowed(self):
        cert = DualBoundCertificate.make(
            {1: F(1)}, F(100), {("c", 0, "le"): F(1), ("c", 1, "le"): F(1)})
        assert check_dual(self._bound_system(), cert).ok

    def test_too_tight_bound_rejected(self):
        cert = DualBoundCertificate.make(
            {1: F(1)}, F(2), {("c", 0, "le"): F(1), ("c", 1, "le"): F(1)})
        res = check_dual(self._bound_system(), cert)
        assert not res.ok and "> bound" in res.reason

    def test_objective_mismatch_rejected(self):
        cert = DualBoundCertificate.make(
            {0: F(1)}, F(3), {("c", 0, "le"): F(1), ("c", 1, "le"): F(1)})
        res = check_dual(self._bound_system(), cert)
        assert not res.ok and res.reason == "lambda^T A != g^T"

    def test_zero_entries_normalized_out_of_the_certificate(self):
        cert = DualBoundCertificate.make(
            {0: F(0), 1: F(1)}, F(3),
            {("c", 0, "le"): F(1), ("c", 1, "le"): F(1), ("c", 99, "le"): F(0)})
        assert dict(cert.objective) == {1: F(1)}
        assert len(cert.multipliers) == 2


class TestGuardedChecker:
    def _store(self, alpha):
        net, prop = worked_network(), worked_prop()
        return build_initial_store(net, layout_of(net, prop), worked_region(), prop, alpha)

    def test_extend_with_guards_appends_resolvable_rows(self):
        store = self._store({})
        base = store.normalize()
        lit = GuardLiteral((1, 0), ACTIVE)
        sys = extend_with_guards(base, store.layout, [lit])
        assert len(sys) == len(base) + 3
        assert sys.resolve(("g", 1, 0, ACTIVE, 2)) is not None

    def test_unknown_unit_rejected(self):
        store = self._store({})
        cert = GuardedCertificate.make(
            [GuardLiteral((9, 9), ACTIVE)], FarkasCertificate.make({}))
        res = check_guarded(store, cert)
        assert not res.ok and "unknown unit" in res.reason

    def test_guarded_refutation_of_both_inactive(self):
        """With both units inactive, y = 0 yet the query demands y >= 11/10."""
        from relucert import lp

        store = self._store({})
        guards = [GuardLiteral((1, 0), INACTIVE), GuardLiteral((1, 1), INACTIVE)]
        sys = extend_with_guards(store.normalize(), store.layout, guards)
        out = lp.lp_feasible(sys)
        assert out.status == lp.INFEASIBLE
        cert = GuardedCertificate.make(guards, FarkasCertificate.make(out.dual))
        assert check_guarded(store, cert).ok
        # the same certificate without its guard rows must fail
        assert not check_farkas(store.normalize(), cert.inner).ok

    def test_guards_stored_in_canonical_order(self):
        a = GuardedCertificate.make(
            [GuardLiteral((1, 1), ACTIVE), GuardLiteral((1, 0), INACTIVE)],
            FarkasCertificate.make({}))
        assert [g.unit for g in a.guards] == [(1, 0), (1, 1)]

    def test_conflict_clause_negates_the_guard_set(self):
        cert = GuardedCertificate.make(
            [GuardLiteral((1, 0), ACTIVE)], FarkasCertificate.make({}))
        clause = derive_conflict_clause(cert, 5)
        assert clause == ConflictClause(frozenset({GuardLiteral((1, 0), ACTIVE)}), 5)


class TestOperationCounter:
    def _chain(self, m):
        """m rows x_{i+1} - x_i <= 1 plus x_0 <= 0; all-ones lambda proves
        x_m <= m.  nnz grows linearly in m."""
        rows = [({0: F(1)}, F(0))]
        for i in range(m):
            rows.append(({i + 1: F(1), i: F(-1)}, F(1)))
        sys = _sys(rows)
        cert = DualBoundCertificate.make(
            {m: F(1)}, F(m), {("c", i, "le"): F(1) for i in range(m + 1)})
        return sys, cert

    def test_counter_counts_multiplications(self):
        sys, cert = self._chain(10)
        certs.counter.reset()
        assert check_dual(sys, cert).ok
        assert certs.counter.mults > 0

    def test_cost_scales_linearly_with_nonzeros(self):
        costs = {}
        for m in (10, 100, 1000):
            sys, cert = self._chain(m)
            nnz = sum(len(r.row) for r in sys.rows)
            certs.counter.reset()
            assert check_dual(sys, cert).ok
            costs[m] = certs.counter.mults / nnz
        assert costs[100] <= costs[10] * F(12, 10)
        assert costs[1000] <= costs[100] * F(12, 10)
