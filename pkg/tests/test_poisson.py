from fractions import Fraction

import pytest

from darboux.expr import Domain, Rat, parse, simplify, add, ZERO, ONE, MINUS_ONE
from darboux.poisson import (
    StructureMatrix, canonical_matrix, check_casimir, check_jacobi, check_skew,
    congruence_transform, generic_rank, jacobi_residual, numeric_rank,
    transform_structure,
)
from darboux import fixtures
from _oracles import fraction_free_rank, random_rational_skew
import random


class TestCanonicalMatrix:
    def test_3_2_layout(self):
        S = canonical_matrix(3, 2).matrix
        assert S == ((ZERO, ONE, ZERO), (MINUS_ONE, ZERO, ZERO),
                     (ZERO, ZERO, ZERO))

    def test_rank_zero_is_zero_matrix(self):
        S = canonical_matrix(4, 0).matrix
        assert all(e == ZERO for row in S for e in row)

    def test_4_4_two_blocks(self):
        S = canonical_matrix(4, 4).matrix
        assert S[0][1] == ONE and S[1][0] == MINUS_ONE
        assert S[2][3] == ONE and S[3][2] == MINUS_ONE
        assert S[0][2] == ZERO and S[1][3] == ZERO

    def test_odd_rank_rejected(self):
        with pytest.raises(ValueError):
            canonical_matrix(4, 3)


class TestSkew:
    def test_so3_passes(self):
        assert check_skew(fixtures.so3()).verdict == "pass"

    def test_symmetric_fails_with_location(self):
        dom = Domain.make(("x1", "x2"))
        J = StructureMatrix.from_rows(
            [[ZERO, ONE], [ONE, ZERO]], dom)
        report = check_skew(J)
        assert report.verdict == "fail" and report.location == (1, 2)

    def test_zero_matrix_passes(self):
        assert check_skew(fixtures.zero_matrix(3)).verdict == "pass"


class TestJacobi:
    def test_so3_passes(self):
        assert check_jacobi(fixtures.so3()).verdict == "pass"

    def test_constant_skew_always_passes(self):
        rng = random.Random(11)
        for _ in range(10):
            n = rng.randint(2, 5)
            A = random_rational_skew(rng, n)
            dom = Domain.make(tuple(f"x{i+1}" for i in range(n)))
            J = StructureMatrix.from_rows(
                [[Rat(v) for v in row] for row in A], dom)
            assert check_jacobi(J).verdict == "pass"

    def test_non_jacobi_fails_at_first_triple(self):
        report = check_jacobi(fixtures.non_jacobi())
        assert report.verdict == "fail"
        assert report.location == (1, 2, 3)
        # the residual is the constant -1
        J = fixtures.non_jacobi()
        assert simplify(jacobi_residual(J, 0, 1, 2)) == MINUS_ONE

    def test_canonical_matrices_pass(self):
        for n in range(2, 7):
            for r in range(0, n + 1, 2):
                dom = Domain.make(tuple(f"x{i+1}" for i in range(n)))
                J = StructureMatrix(canonical_matrix(n, r).matrix, dom)
                assert check_jacobi(J).verdict == "pass"

    def test_paper_fixtures_pass(self):
        for J in (fixtures.so3(), fixtures.kermack_mckendrick(),
                  fixtures.toda(3), fixtures.dpsi_example()):
            assert check_skew(J).verdict == "pass"
            assert check_jacobi(J).verdict == "pass"


class TestRank:
    def test_so3_rank_two(self):
        J = fixtures.so3()
        assert numeric_rank(J, {"x1": 1, "x2": 1, "x3": 1}) == 2

    def test_rank_drops_at_origin(self):
        J = fixtures.so3("unrestricted")
        assert numeric_rank(J, {"x1": 0, "x2": 0, "x3": 0}) == 0

    def test_zero_matrix(self):
        J = fixtures.zero_matrix(3)
        assert numeric_rank(J, {"x1": 1, "x2": 2, "x3": 3}) == 0

    def test_toda_rank_four(self):
        J = fixtures.toda(3)
        point = {f"x{i+1}": 1.0 + 0.1 * i for i in range(5)}
        assert numeric_rank(J, point) == 4

    def test_generic_rank_consistent_on_fixtures(self):
        for J, expected in ((fixtures.kermack_mckendrick(), 2),
                            (fixtures.dpsi_example(), 2),
                            (fixtures.toda(3), 4)):
            r, report = generic_rank(J)
            assert r == expected and report.consistent

    def test_matches_fraction_free_oracle_on_constants(self):
        rng = random.Random(5)
        for _ in range(20):
            n = rng.randint(2, 6)
            A = random_rational_skew(rng, n)
            dom = Domain.make(tuple(f"x{i+1}" for i in range(n)))
            J = StructureMatrix.from_rows([[Rat(v) for v in row] for row in A], dom)
            point = {v: 1.0 for v in dom.variables}
            assert numeric_rank(J, point) == fraction_free_rank(A)


class TestTransform:
    def test_identity_leaves_unchanged(self):
        J = fixtures.so3()
        n = J.n
        I = tuple(tuple(ONE if i == j else ZERO for j in range(n))
                  for i in range(n))
        assert transform_structure(J, I) == J.entries

    def test_dimension_mismatch(self):
        J = fixtures.so3()
        with pytest.raises(ValueError):
            transform_structure(J, ((ONE, ZERO), (ZERO, ONE)))

    def test_preserves_skew_on_corpus(self):
        J = fixtures.kermack_mckendrick()
        dom = J.domain
        K = tuple(tuple(parse(t, dom) for t in row) for row in
                  (("1/x1", "0", "0"), ("0", "1/(b*x2)", "0"), ("1", "1", "1")))
        out = transform_structure(J, K)
        for i in range(3):
            for j in range(3):
                assert simplify(add(out[i][j], out[j][i])) == ZERO

    def test_kermack_paper_congruence_reaches_target(self):
        J = fixtures.kermack_mckendrick()
        dom = J.domain
        K = tuple(tuple(parse(t, dom) for t in row) for row in
                  (("1/x1", "0", "0"), ("0", "1/(b*x2)", "0"), ("1", "1", "1")))
        assert transform_structure(J, K) == canonical_matrix(3, 2).matrix

    def test_congruence_preserves_numeric_rank(self):
        J = fixtures.so3()
        dom = J.domain
        K = tuple(tuple(parse(t, dom) for t in row) for row in
                  (("1", "0", "0"), ("0", "1", "0"), ("x1", "x2", "x3")))
        out = StructureMatrix(transform_structure(J, K), dom)
        point = {"x1": 0.7, "x2": 1.1, "x3": 0.4}
        assert numeric_rank(out, point) == numeric_rank(J, point)


class TestCasimir:
    def test_kermack_linear_casimir(self):
        J = fixtures.kermack_mckendrick()
        assert check_casimir(J, parse("x1 + x2 + x3", J.domain)).verdict == "pass"

    def test_so3_sphere_casimir(self):
        J = fixtures.so3()
        assert check_casimir(J, fixtures.so3_casimir(J)).verdict == "pass"

    def test_constant_is_always_casimir(self):
        J = fixtures.so3()
        assert check_casimir(J, Rat(Fraction(7))).verdict == "pass"

    def test_non_casimir_fails(self):
        J = fixtures.so3()
        assert check_casimir(J, parse("x1", J.domain)).verdict == "fail"
