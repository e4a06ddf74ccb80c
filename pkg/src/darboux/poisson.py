"""Structure matrices and the checks that define a Poisson structure.

A structure matrix J(x) must be skew-symmetric and satisfy the Jacobi PDEs

    sum_l [ J_li d_l J_jk + J_lj d_l J_ki + J_lk d_l J_ij ] = 0

for all triples (i, j, k).  The canonical target of the reduction is the
block matrix S(n, r): r/2 symplectic 2x2 blocks followed by an
(n-r)-dimensional zero block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .expr import (
    DEFAULT_SAMPLER, Domain, Expr, Rat, SamplerConfig, ZeroVerdict, add,
    differentiate, evaluate, free_parameters, free_variables, is_zero, mul,
    simplify, ZERO, ONE, MINUS_ONE,
)

Grid = tuple[tuple[Expr, ...], ...]


def as_grid(rows) -> Grid:
    return tuple(tuple(simplify(e) for e in row) for row in rows)


@dataclass(frozen=True)
class StructureMatrix:
    """n x n matrix of expressions over a domain, optionally with a Hamiltonian."""

    entries: Grid
    domain: Domain
    hamiltonian: Expr | None = None

    def __post_init__(self):
        n = len(self.entries)
        if any(len(row) != n for row in self.entries):
            raise ValueError("structure matrix must be square")
        declared_v = set(self.domain.variables)
        declared_p = set(self.domain.parameters)
        exprs = [e for row in self.entries for e in row]
        if self.hamiltonian is not None:
            exprs.append(self.hamiltonian)
        for e in exprs:
            undeclared = (free_variables(e) - declared_v) | (free_parameters(e) - declared_p)
            if undeclared:
                raise ValueError(f"undeclared symbols {sorted(undeclared)}")

    @property
    def n(self) -> int:
        return len(self.entries)

    @staticmethod
    def from_rows(rows, domain: Domain, hamiltonian: Expr | None = None) -> "StructureMatrix":
        return StructureMatrix(as_grid(rows), domain, hamiltonian)


@dataclass(frozen=True)
class CanonicalTarget:
    """The Darboux canonical matrix S(n, r)."""

    n: int
    r: int

    @property
    def matrix(self) -> Grid:
        rows = [[ZERO] * self.n for _ in range(self.n)]
        for b in range(self.r // 2):
            rows[2 * b][2 * b + 1] = ONE
            rows[2 * b + 1][2 * b] = MINUS_ONE
        return tuple(tuple(row) for row in rows)


def canonical_matrix(n: int, r: int) -> CanonicalTarget:
    if r % 2 != 0:
        raise ValueError("rank of a skew-symmetric matrix must be even")
    if not 0 <= r <= n:
        raise ValueError("rank must satisfy 0 <= r <= n")
    return CanonicalTarget(n, r)


@dataclass(frozen=True)
class JacobiReport:
    verdict: str  # pass | fail | undetermined
    location: tuple | None = None
    residual: Expr | None = None
    evidence: ZeroVerdict | None = None


def check_skew(J: StructureMatrix, cfg: SamplerConfig = DEFAULT_SAMPLER) -> JacobiReport:
    """Pass iff entry(i,j) + entry(j,i) vanishes for every pair."""
    undetermined = None
    for i in range(J.n):
        for j in range(i, J.n):
            resid = add(J.entries[i][j], J.entries[j][i])
            v = is_zero(resid, J.domain, cfg)
            if v.outcome == "nonzero":
                return JacobiReport("fail", (i + 1, j + 1), resid, v)
            if v.outcome == "undetermined" and undetermined is None:
                undetermined = JacobiReport("undetermined", (i + 1, j + 1), resid, v)
    return undetermined or JacobiReport("pass")


def jacobi_residual(J: StructureMatrix, i: int, j: int, k: int) -> Expr:
    """The (i,j,k) Jacobi PDE left-hand side, 0-based indices."""
    xs = J.domain.variables
    parts = []
    for l in range(J.n):
        dl = xs[l]
        parts.append(mul(J.entries[l][i], differentiate(J.entries[j][k], dl)))
        parts.append(mul(J.entries[l][j], differentiate(J.entries[k][i], dl)))
        parts.append(mul(J.entries[l][k], differentiate(J.entries[i][j], dl)))
    return add(*parts)


def check_jacobi(J: StructureMatrix, cfg: SamplerConfig = DEFAULT_SAMPLER) -> JacobiReport:
    """Verify the Jacobi PDEs on all i<j<k triples (the rest follow by antisymmetry)."""
    undetermined = None
    for i in range(J.n):
        for j in range(i + 1, J.n):
            for k in range(j + 1, J.n):
                resid = jacobi_residual(J, i, j, k)
                v = is_zero(resid, J.domain, cfg)
                if v.outcome == "nonzero":
                    return JacobiReport("fail", (i + 1, j + 1, k + 1), resid, v)
                if v.outcome == "undetermined" and undetermined is None:
                    undetermined = JacobiReport(
                        "undetermined", (i + 1, j + 1, k + 1), resid, v)
    return undetermined or JacobiReport("pass")


_RANK_RTOL = 1e-8


def numeric_rank(J: StructureMatrix, point, params=None) -> int:
    """Rank of J evaluated at a point, by singular-value thresholding."""
    M = np.array([[evaluate(e, point, params, J.domain) for e in row]
                  for row in J.entries], dtype=float)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > _RANK_RTOL * sv[0]))


@dataclass(frozen=True)
class RankReport:
    rank: int
    consistent: bool
    ranks: tuple[int, ...]
    seed: int


def generic_rank(J: StructureMatrix, cfg: SamplerConfig = DEFAULT_SAMPLER) -> tuple[int, RankReport]:
    """Maximum sampled rank plus a constant-rank consistency flag."""
    rng = np.random.default_rng(cfg.seed)
    ranks = []
    attempts = 0
    while len(ranks) < cfg.samples and attempts < cfg.samples * 20:
        attempts += 1
        point, params = J.domain.sample(rng)
        try:
            ranks.append(numeric_rank(J, point, params))
        except Exception:
            continue
    if not ranks:
        return 0, RankReport(0, False, (), cfg.seed)
    r = max(ranks)
    return r, RankReport(r, all(x == r for x in ranks), tuple(ranks), cfg.seed)


def matmul(A: Grid, B: Grid) -> Grid:
    n, m, k = len(A), len(B[0]), len(B)
    return tuple(
        tuple(add(*[mul(A[i][l], B[l][j]) for l in range(k)]) for j in range(m))
        for i in range(n))


def transpose(A: Grid) -> Grid:
    return tuple(tuple(A[j][i] for j in range(len(A))) for i in range(len(A[0])))


def congruence_transform(M: Grid, K: Grid) -> Grid:
    """simplify(K . M . K^T) entrywise."""
    return matmul(matmul(K, M), transpose(K))


def transform_structure(J: StructureMatrix, K: Grid) -> Grid:
    """Push J through the congruence/transform rule for a candidate Jacobian K."""
    if len(K) != J.n or any(len(row) != J.n for row in K):
        raise ValueError("congruence matrix dimension mismatch")
    out = congruence_transform(J.entries, K)
    for i in range(J.n):
        for j in range(i, J.n):
            assert simplify(add(out[i][j], out[j][i])) == ZERO, \
                "congruence broke skew-symmetry"
    return out


def gradient(e: Expr, domain: Domain) -> tuple[Expr, ...]:
    return tuple(differentiate(e, v) for v in domain.variables)


def check_casimir(J: StructureMatrix, C: Expr,
                  cfg: SamplerConfig = DEFAULT_SAMPLER) -> JacobiReport:
    """Pass iff every component of J . grad(C) vanishes on the domain."""
    grad = gradient(C, J.domain)
    undetermined = None
    for i in range(J.n):
        comp = add(*[mul(J.entries[i][j], grad[j]) for j in range(J.n)])
        v = is_zero(comp, J.domain, cfg)
        if v.outcome == "nonzero":
            return JacobiReport("fail", (i + 1,), comp, v)
        if v.outcome == "undetermined" and undetermined is None:
            undetermined = JacobiReport("undetermined", (i + 1,), comp, v)
    return undetermined or JacobiReport("pass")
