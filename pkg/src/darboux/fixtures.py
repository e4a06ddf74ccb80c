"""Ready-made Poisson structure matrices and family generators.

These cover the classical examples the reduction is exercised on: the
two-dimensional family, the Lie-Poisson so(3) bracket, the
Kermack-McKendrick epidemic bracket, the Toda lattice, separable structure
matrices J_ij = a_ij * phi_i(x_i) * phi_j(x_j), and scalar-times-constant
("D_psi") matrices J = psi(v_{r+1}.x, ..., v_n.x) * A built from a constant
skew matrix A and its kernel basis.
"""

from __future__ import annotations

from fractions import Fraction

from .expr import Domain, Exp, Expr, Rat, Var, add, mul, parse, simplify, ZERO
from .poisson import StructureMatrix


def two_dimensional(f: Expr, domain: Domain,
                    hamiltonian: Expr | None = None) -> StructureMatrix:
    """The general 2-d structure matrix [[0, f], [-f, 0]]."""
    if len(domain.variables) != 2:
        raise ValueError("two-dimensional family needs exactly two variables")
    return StructureMatrix.from_rows(
        [[ZERO, f], [mul(Rat(Fraction(-1)), f), ZERO]], domain, hamiltonian)


def so3(signs: str = "positive") -> StructureMatrix:
    """Lie-Poisson so(3): J = [[0, -x3, x2], [x3, 0, -x1], [-x2, x1, 0]].

    The rigid-body Hamiltonian with moments of inertia (1, 1/2, 1/3) is
    attached; the sphere (x1^2 + x2^2 + x3^2)/2 is the Casimir.
    """
    dom = Domain.make(("x1", "x2", "x3"),
                      {v: signs for v in ("x1", "x2", "x3")})
    rows = [["0", "-1*x3", "x2"],
            ["x3", "0", "-1*x1"],
            ["-1*x2", "x1", "0"]]
    H = parse("1/2*x1^2 + x2^2 + 3/2*x3^2", dom)
    return StructureMatrix.from_rows(
        [[parse(e, dom) for e in row] for row in rows], dom, H)


def so3_casimir(J: StructureMatrix) -> Expr:
    return parse("1/2*x1^2 + 1/2*x2^2 + 1/2*x3^2", J.domain)


def kermack_mckendrick() -> StructureMatrix:
    """The epidemic-model bracket J = b*x1*x2 * [[0,1,-1],[-1,0,1],[1,-1,0]]."""
    dom = Domain.make(("x1", "x2", "x3"),
                      {v: "positive" for v in ("x1", "x2", "x3")},
                      {"b": "positive"})
    rows = [["0", "b*x1*x2", "-1*b*x1*x2"],
            ["-1*b*x1*x2", "0", "b*x1*x2"],
            ["b*x1*x2", "-1*b*x1*x2", "0"]]
    H = parse("x1", dom)
    return StructureMatrix.from_rows(
        [[parse(e, dom) for e in row] for row in rows], dom, H)


def toda(N: int = 3) -> StructureMatrix:
    """Toda lattice with N sites in Flaschka-like variables.

    Variables are (x1..x_{N-1}) = off-diagonal entries (kept positive) and
    (x_N..x_{2N-1}) = diagonal entries, with nonzero brackets
    {x_i, x_{N-1+i}} = -x_i and {x_i, x_{N+i}} = x_i for i < N.
    """
    if N < 2:
        raise ValueError("the lattice needs at least two sites")
    n = 2 * N - 1
    names = tuple(f"x{i + 1}" for i in range(n))
    signs = {names[i]: "positive" for i in range(N - 1)}
    dom = Domain.make(names, signs)
    rows = [[ZERO] * n for _ in range(n)]
    for i in range(N - 1):
        a = Var(names[i])
        rows[i][N - 1 + i] = mul(Rat(Fraction(-1)), a)
        rows[N - 1 + i][i] = a
        rows[i][N + i] = a
        rows[N + i][i] = mul(Rat(Fraction(-1)), a)
    H = add(*[mul(Rat(Fraction(1, 2)), mul(Var(names[N - 1 + i]), Var(names[N - 1 + i])))
              for i in range(N)],
            *[mul(Rat(Fraction(2)), mul(Var(names[i]), Var(names[i])))
              for i in range(N - 1)])
    return StructureMatrix.from_rows(rows, dom, H)


def separable(A, phis, domain: Domain,
              hamiltonian: Expr | None = None) -> StructureMatrix:
    """J_ij = a_ij * phi_i(x_i) * phi_j(x_j) from constant skew A.

    ``phis`` maps each variable index to an expression in that variable only.
    The caller is responsible for choosing A so the Jacobi identities hold
    (any constant skew A works, since the family is closed under the
    row/column scalings diag(phi_i)).
    """
    n = len(domain.variables)
    if len(A) != n or any(len(row) != n for row in A):
        raise ValueError("A must match the domain dimension")
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            a = Fraction(A[i][j])
            if a != -Fraction(A[j][i]):
                raise ValueError("A must be skew-symmetric")
            row.append(simplify(mul(Rat(a), mul(phis[i], phis[j]))) if a else ZERO)
        rows.append(row)
    return StructureMatrix.from_rows(rows, domain, hamiltonian)


def kernel_basis(A) -> list[list[Fraction]]:
    """Exact basis of the null space of a rational matrix (row vectors)."""
    n = len(A)
    M = [[Fraction(v) for v in row] for row in A]
    cols = len(M[0])
    pivots = []
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, n) if M[i][c]), None)
        if piv is None:
            continue
        M[r], M[piv] = M[piv], M[r]
        M[r] = [v / M[r][c] for v in M[r]]
        for i in range(n):
            if i != r and M[i][c]:
                f = M[i][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
    free = [c for c in range(cols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * cols
        v[fc] = Fraction(1)
        for row_idx, pc in enumerate(pivots):
            v[pc] = -M[row_idx][fc]
        basis.append(v)
    return basis


def dpsi(A, psi, domain: Domain,
         hamiltonian: Expr | None = None) -> StructureMatrix:
    """J = psi(v_{r+1}.x, ..., v_n.x) * A for constant skew A.

    ``psi`` is a callable taking the kernel linear forms (one Expr per basis
    vector of Ker A) and returning a nonvanishing scalar Expr; the linear
    forms are Casimirs of the result.
    """
    n = len(domain.variables)
    forms = [
        simplify(add(*[mul(Rat(v[j]), Var(domain.variables[j]))
                       for j in range(n) if v[j]]))
        for v in kernel_basis(A)
    ]
    factor = simplify(psi(*forms))
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            a = Fraction(A[i][j])
            row.append(simplify(mul(Rat(a), factor)) if a else ZERO)
        rows.append(row)
    return StructureMatrix.from_rows(rows, domain, hamiltonian)


def dpsi_example() -> StructureMatrix:
    """The 4-d rank-2 instance with psi(z1, z2) = exp(z1 + z2)."""
    dom = Domain.make(("x1", "x2", "x3", "x4"))
    A = [[0, 1, -1, -1], [-1, 0, 0, 1], [1, 0, 0, -1], [1, -1, 1, 0]]
    return dpsi(A, lambda z1, z2: Exp(add(z1, z2)), dom,
                hamiltonian=parse("x1", dom))


def non_jacobi() -> StructureMatrix:
    """Skew but violating the Jacobi PDEs: [[0,1,x1],[-1,0,0],[-x1,0,0]]."""
    dom = Domain.make(("x1", "x2", "x3"))
    rows = [["0", "1", "x1"], ["-1", "0", "0"], ["-1*x1", "0", "0"]]
    return StructureMatrix.from_rows(
        [[parse(e, dom) for e in row] for row in rows], dom)


def zero_matrix(n: int = 3) -> StructureMatrix:
    dom = Domain.make(tuple(f"x{i + 1}" for i in range(n)))
    return StructureMatrix.from_rows([[ZERO] * n for _ in range(n)], dom)
