import random
from fractions import Fraction

import pytest

from darboux.expr import (
    Domain, Exp, Rat, Var, add, free_variables, mul, parse, simplify, to_text,
    ZERO, ONE, MINUS_ONE,
)
from darboux.poisson import (
    StructureMatrix, canonical_matrix, check_casimir, check_jacobi,
    congruence_transform,
)
from darboux.congruence import (
    Combine, Permute, Scale, apply_step, casimirs_from, constant_rank,
    etm_matrix, extract_scalar_factor, integrate_jacobian, is_jetm,
    jacobian_condition, jetm_diffeomorphism, reduce_constant,
    reduce_functional, reparam_validity,
)
from darboux import fixtures
from _oracles import fraction_free_rank, random_rational_skew

DOM3 = Domain.make(("x1", "x2", "x3"),
                   {"x1": "positive", "x2": "positive", "x3": "positive"},
                   {"b": "positive"})


def p(text, dom=DOM3):
    return parse(text, dom)


def grid_equal(A, B):
    return all(simplify(add(a, mul(MINUS_ONE, b))) == ZERO
               for ra, rb in zip(A, B) for a, b in zip(ra, rb))


class TestEtmMatrix:
    def test_permute(self):
        E = etm_matrix(Permute(0, 1, 3))
        assert E == ((ZERO, ONE, ZERO), (ONE, ZERO, ZERO), (ZERO, ZERO, ONE))

    def test_scale_diagonal(self):
        E = etm_matrix(Scale(0, p("-1/x3"), 3))
        assert E[0][0] == p("-1/x3") and E[1][1] == ONE and E[2][2] == ONE
        assert E[0][1] == ZERO

    def test_combine_off_diagonal(self):
        E = etm_matrix(Combine(2, p("x2/x3"), 1, 3))
        assert E[2][1] == p("x2/x3")
        assert all(E[i][i] == ONE for i in range(3))

    def test_permute_same_index_rejected(self):
        with pytest.raises(ValueError):
            etm_matrix(Permute(1, 1, 3))


class TestIsJetm:
    def test_scale_own_variable(self):
        ok, _ = is_jetm(Scale(0, p("1/x1"), 3), DOM3)
        assert ok

    def test_scale_foreign_variable(self):
        ok, reason = is_jetm(Scale(0, p("-1/x3"), 3), DOM3)
        assert not ok and "x3" in reason

    def test_combine_source_column_variable(self):
        ok, _ = is_jetm(Combine(2, p("-x1"), 0, 3), DOM3)
        assert ok

    def test_permute_always(self):
        ok, _ = is_jetm(Permute(0, 2, 3), DOM3)
        assert ok

    def test_constant_factors_always_admissible(self):
        assert is_jetm(Scale(1, p("b"), 3), DOM3)[0]
        assert is_jetm(Combine(2, Rat(Fraction(5)), 0, 3), DOM3)[0]


class TestJetmDiffeomorphism:
    def test_permute_swaps_components(self):
        dom = Domain.make(tuple(f"x{i+1}" for i in range(5)))
        y = jetm_diffeomorphism(Permute(1, 2, 5), dom)
        assert y == (Var("x1"), Var("x3"), Var("x2"), Var("x4"), Var("x5"))

    def test_scale_integrates_factor(self):
        y = jetm_diffeomorphism(Scale(1, p("1/(b*x2)"), 3), DOM3)
        assert y[1] == p("log(x2)/b")
        assert y[0] == Var("x1") and y[2] == Var("x3")

    def test_combine_adds_antiderivative(self):
        dom = Domain.make(tuple(f"x{i+1}" for i in range(5)))
        y = jetm_diffeomorphism(Combine(3, ONE, 2, 5), dom)
        assert y[3] == parse("x3 + x4", dom)

    def test_jacobian_of_map_is_etm(self):
        from darboux.expr import differentiate
        t = Scale(1, p("1/(b*x2)"), 3)
        y = jetm_diffeomorphism(t, DOM3)
        E = etm_matrix(t)
        for i in range(3):
            for j, v in enumerate(DOM3.variables):
                assert simplify(differentiate(y[i], v)) == simplify(E[i][j])

    def test_rejects_non_jetm(self):
        from darboux.expr import ExprError
        with pytest.raises(ExprError):
            jetm_diffeomorphism(Scale(0, p("-1/x3"), 3), DOM3)


class TestJacobianCondition:
    def test_identity_passes(self):
        I = etm_matrix(Permute(0, 1, 3))
        assert jacobian_condition(etm_matrix(Scale(0, ONE, 3)), DOM3).verdict == "pass"

    def test_so3_global_congruence_matrix_fails(self):
        K = tuple(tuple(p(t) for t in row) for row in
                  (("-1/x3", "0", "0"), ("0", "1", "0"), ("x1/x3", "x2/x3", "1")))
        report = jacobian_condition(K, DOM3)
        assert report.verdict == "fail"
        assert report.location == (1, 1, 3)

    def test_triangular_product_matrix_passes(self):
        K = tuple(tuple(p(t) for t in row) for row in
                  (("1", "0", "0"), ("0", "1", "0"), ("x1", "x2", "x3")))
        assert jacobian_condition(K, DOM3).verdict == "pass"


class TestApplyStep:
    def test_zero_matrix_stays_zero(self):
        Z = tuple((ZERO,) * 3 for _ in range(3))
        assert apply_step(Z, Scale(0, p("1/x1"), 3)) == Z

    def test_scale_normalizes_pivot(self):
        A = tuple(tuple(Rat(Fraction(v)) for v in row)
                  for row in ((0, 4, 0), (-4, 0, 0), (0, 0, 0)))
        out = apply_step(A, Scale(0, Rat(Fraction(1, 4)), 3))
        assert out[0][1] == ONE and out[1][0] == MINUS_ONE

    def test_so3_three_steps_reach_target(self):
        J = fixtures.so3()
        M = J.entries
        for t in (Scale(0, p("-1/x3"), 3),
                  Combine(2, p("x2/x3"), 1, 3),
                  Combine(2, p("-x1"), 0, 3)):
            M = apply_step(M, t)
        assert grid_equal(M, canonical_matrix(3, 2).matrix)


class TestReduceConstant:
    def test_single_block_scaling(self):
        c = Fraction(5, 2)
        trace = reduce_constant([[0, c], [-c, 0]])
        K = trace.K
        assert K == ((Rat(Fraction(2, 5)), ZERO), (ZERO, ONE))
        assert constant_rank(trace) == 2

    def test_zero_matrix_empty_trace(self):
        trace = reduce_constant([[0] * 4 for _ in range(4)])
        assert trace.steps == ()
        assert constant_rank(trace) == 0

    def test_non_skew_rejected(self):
        with pytest.raises(ValueError):
            reduce_constant([[0, 1], [1, 0]])

    def test_rank4_6x6_exact(self):
        rng = random.Random(42)
        while True:
            A = random_rational_skew(rng, 6, zero_chance=0.5)
            if fraction_free_rank(A) == 4:
                break
        trace = reduce_constant(A)
        K = trace.K
        Agrid = tuple(tuple(Rat(v) for v in row) for row in A)
        assert congruence_transform(Agrid, K) == canonical_matrix(6, 4).matrix

    def test_trace_invariants_replay_and_product(self):
        rng = random.Random(3)
        A = random_rational_skew(rng, 5)
        trace = reduce_constant(A)
        assert trace.replay() == trace.final
        Agrid = tuple(tuple(Rat(v) for v in row) for row in A)
        assert congruence_transform(Agrid, trace.K) == trace.final


class TestIntegrateJacobian:
    def test_identity(self):
        I = tuple(tuple(ONE if i == j else ZERO for j in range(3))
                  for i in range(3))
        assert integrate_jacobian(I, DOM3) == (Var("x1"), Var("x2"), Var("x3"))

    def test_toda_jacobian(self):
        dom = Domain.make(tuple(f"x{i+1}" for i in range(5)),
                          {"x1": "positive", "x2": "positive"})
        rows = (("-1/x1", "0", "0", "0", "0"),
                ("0", "0", "1", "0", "0"),
                ("0", "-1/x2", "0", "0", "0"),
                ("0", "0", "1", "1", "0"),
                ("0", "0", "1", "1", "1"))
        K = tuple(tuple(parse(t, dom) for t in row) for row in rows)
        y = integrate_jacobian(K, dom)
        assert y == tuple(parse(t, dom) for t in
                          ("-log(x1)", "x3", "-log(x2)", "x3 + x4",
                           "x3 + x4 + x5"))

    def test_quadratic_jacobian(self):
        K = tuple(tuple(p(t) for t in row) for row in
                  (("-x1", "-x2", "0"), ("0", "x2", "0"), ("x1", "x2", "x3")))
        y = integrate_jacobian(K, DOM3)
        assert y == (p("-(x1^2 + x2^2)/2"), p("x2^2/2"),
                     p("(x1^2 + x2^2 + x3^2)/2"))

    def test_incompatible_matrix_rejected(self):
        from darboux.expr import ExprError
        K = tuple(tuple(p(t) for t in row) for row in
                  (("-1/x3", "0", "0"), ("0", "1", "0"), ("x1/x3", "x2/x3", "1")))
        with pytest.raises(ExprError):
            integrate_jacobian(K, DOM3)


class TestExtractScalarFactor:
    def test_monomial_factor(self):
        S = canonical_matrix(3, 2).matrix
        M = tuple(tuple(simplify(mul(p("x1*x2*x3"), e)) for e in row) for row in S)
        g, report = extract_scalar_factor(M, 3, 2, DOM3)
        assert report.passed and g == p("x1*x2*x3")

    def test_plain_target_gives_one(self):
        S = canonical_matrix(4, 2).matrix
        dom = Domain.make(tuple(f"x{i+1}" for i in range(4)))
        g, report = extract_scalar_factor(S, 4, 2, dom)
        assert report.passed and g == ONE

    def test_negative_factor(self):
        S = canonical_matrix(3, 2).matrix
        M = tuple(tuple(simplify(mul(p("-x3"), e)) for e in row) for row in S)
        g, report = extract_scalar_factor(M, 3, 2, DOM3)
        assert report.passed and g == p("-x3")

    def test_pattern_mismatch(self):
        J = fixtures.so3()
        g, report = extract_scalar_factor(J.entries, 3, 2, J.domain)
        assert not report.passed


class TestReparamValidity:
    def test_rank_two_accepts_anything(self):
        report = reparam_validity(p("x1*x2*x3"), 3, 2, ())
        assert report.passed and report.branch == "rank-at-most-2"

    def test_casimir_dependent(self):
        dom = Domain.make(("y1", "y2", "y3", "y4"))
        g = parse("exp(y3 + y4)", dom)
        report = reparam_validity(g, 4, 2, ("y3", "y4"))
        assert report.passed and report.branch == "casimir-dependent"

    def test_symplectic_nonconstant_fails(self):
        dom = Domain.make(("y1", "y2", "y3", "y4"))
        report = reparam_validity(parse("y1", dom), 4, 4, ())
        assert not report.passed and report.branch == "symplectic-nonconstant"

    def test_constant_always_valid(self):
        report = reparam_validity(Rat(Fraction(3)), 6, 6, ())
        assert report.passed and report.branch == "constant"


class TestReduceFunctional:
    def test_kermack_matches_published_reduction(self):
        J = fixtures.kermack_mckendrick()
        result = reduce_functional(J)
        assert result.status == "jacobian-congruence"
        assert (result.target.n, result.target.r) == (3, 2)
        assert result.symbolic_identity
        assert grid_equal(congruence_transform(J.entries, result.K),
                          canonical_matrix(3, 2).matrix)
        # Casimir agrees with x1+x2+x3 up to constant and sign
        [C] = result.casimirs
        diff = simplify(add(C, mul(MINUS_ONE, p("x1 + x2 + x3"))))
        total = simplify(add(C, p("x1 + x2 + x3")))
        assert not free_variables(diff) or not free_variables(total)

    def test_toda_reaches_5_4_with_consistent_y(self):
        from darboux.expr import differentiate
        J = fixtures.toda(3)
        result = reduce_functional(J)
        assert result.status == "jacobian-congruence"
        assert (result.target.n, result.target.r) == (5, 4)
        for i in range(5):
            for j, v in enumerate(J.domain.variables):
                assert simplify(add(differentiate(result.y[i], v),
                                    mul(MINUS_ONE, result.K[i][j]))) == ZERO
        [C] = result.casimirs
        assert simplify(add(C, mul(MINUS_ONE, parse("x3 + x4 + x5", J.domain)))) == ZERO

    def test_so3_jacobian_route_degrades_to_congruence_only(self):
        J = fixtures.so3()
        result = reduce_functional(J, allow_ntt=False)
        assert result.status == "congruence-only"
        assert result.y is None and result.casimirs == ()
        assert grid_equal(congruence_transform(J.entries, result.K),
                          canonical_matrix(3, 2).matrix)
        assert jacobian_condition(result.K, J.domain).verdict != "pass"

    def test_so3_ntt_route(self):
        J = fixtures.so3()
        result = reduce_functional(J, allow_ntt=True)
        assert result.status == "ntt-congruence"
        g = result.ntt_factor
        # K J K^T = g S symbolically
        target = tuple(tuple(simplify(mul(g, e)) for e in row)
                       for row in canonical_matrix(3, 2).matrix)
        assert grid_equal(congruence_transform(J.entries, result.K), target)
        # the Casimir is the sphere up to constant/sign
        [C] = result.casimirs
        sphere = fixtures.so3_casimir(J)
        assert (simplify(add(C, mul(MINUS_ONE, sphere))) == ZERO
                or simplify(add(C, sphere)) == ZERO)
        # the scaled target is itself a structure matrix
        scaled = StructureMatrix(target, J.domain)
        assert check_jacobi(scaled).verdict == "pass"

    def test_dpsi_ntt_casimir_dependent_factor(self):
        J = fixtures.dpsi_example()
        result = reduce_functional(J, allow_ntt=True)
        assert result.status == "ntt-congruence"
        assert (result.target.n, result.target.r) == (4, 2)
        assert result.ntt_factor_in_casimirs is not None
        assert free_variables(result.ntt_factor_in_casimirs) <= set(
            result.casimir_coordinate_names)

    def test_zero_matrix_trivial(self):
        result = reduce_functional(fixtures.zero_matrix(3))
        assert result.status == "jacobian-congruence"
        assert result.target.r == 0
        assert len(result.casimirs) == 3

    def test_symplectic_case_has_no_casimirs(self):
        dom = Domain.make(("x1", "x2"))
        J = StructureMatrix(canonical_matrix(2, 2).matrix, dom)
        result = reduce_functional(J)
        assert result.status == "jacobian-congruence"
        assert result.casimirs == ()
        assert casimirs_from(result) == ()

    def test_budget_exhaustion_reports_failed(self):
        J = fixtures.so3()
        result = reduce_functional(J, max_steps=1)
        assert result.status == "failed"
        assert result.messages

    def test_non_jacobi_input_rejected(self):
        with pytest.raises(ValueError):
            reduce_functional(fixtures.non_jacobi())

    def test_trace_invariants(self):
        J = fixtures.kermack_mckendrick()
        result = reduce_functional(J)
        trace = result.trace
        assert trace.replay() == trace.final
        assert grid_equal(congruence_transform(J.entries, trace.K), trace.final)

    def test_casimirs_recheck_against_source(self):
        J = fixtures.kermack_mckendrick()
        result = reduce_functional(J)
        for C in casimirs_from(result):
            assert check_casimir(J, C).verdict == "pass"


class TestSeparableFamily:
    def test_seeded_instances_reduce_and_verify(self):
        from darboux.verify import verify_reduction
        rng = random.Random(2024)
        produced = 0
        attempts = 0
        while produced < 5 and attempts < 30:
            attempts += 1
            n = rng.randint(3, 5)
            A = random_rational_skew(rng, n, zero_chance=0.2)
            if fraction_free_rank(A) == 0:
                continue
            names = tuple(f"x{i+1}" for i in range(n))
            dom = Domain.make(names, {v: "positive" for v in names})
            phis = []
            for i in range(n):
                kind = rng.choice(("const", "linear", "inverse", "exp"))
                if kind == "const":
                    phis.append(Rat(Fraction(rng.randint(1, 4))))
                elif kind == "linear":
                    phis.append(Var(names[i]))
                elif kind == "inverse":
                    phis.append(parse(f"1/{names[i]}", dom))
                else:
                    phis.append(Exp(Var(names[i])))
            J = fixtures.separable(A, phis, dom)
            assert check_jacobi(J).verdict == "pass"
            result = reduce_functional(J)
            assert result.status == "jacobian-congruence", (A, phis, result.messages)
            report = verify_reduction(J, result)
            assert report.passed
            for C in result.casimirs:
                assert check_casimir(J, C).verdict == "pass"
            produced += 1
        assert produced == 5


class TestTheorem2dWitness:
    def test_non_jetm_product_is_jacobian_with_sphere_casimir(self):
        J = fixtures.so3()
        dom = J.domain
        steps = (Combine(2, p("x1/x3"), 0, 3),
                 Combine(2, p("x2/x3"), 1, 3),
                 Scale(2, p("x3"), 3))
        flags = [is_jetm(t, dom)[0] for t in steps]
        assert flags == [False, False, True]
        K = etm_matrix(steps[0])
        from darboux.poisson import matmul
        K = matmul(etm_matrix(steps[1]), K)
        K = matmul(etm_matrix(steps[2]), K)
        expected = tuple(tuple(p(t) for t in row) for row in
                         (("1", "0", "0"), ("0", "1", "0"), ("x1", "x2", "x3")))
        assert K == expected
        assert jacobian_condition(K, dom).verdict == "pass"
        y = integrate_jacobian(K, dom)
        assert y[2] == p("(x1^2 + x2^2 + x3^2)/2")
        # the transformed matrix is (-x3) times the canonical target
        out = congruence_transform(J.entries, K)
        g, report = extract_scalar_factor(out, 3, 2, dom)
        assert report.passed and g == p("-x3")
