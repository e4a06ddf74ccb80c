"""Elementary congruence transformations and the Darboux reduction search.

The reduction brings a structure matrix J(x) to the canonical block form
S(n, r) by paired row/column elementary transformations (the column matrix is
always the transpose of the row matrix).  Three searches are layered:

* a Jacobian route that only admits transformation steps realizable as smooth
  diffeomorphisms, so the accumulated congruence matrix is a Jacobian and the
  change of coordinates can be recovered by quadratures;
* a new-time route that additionally factors a nonvanishing scalar out of the
  transformed matrix and completes the reduction with a time
  reparametrization;
* an unrestricted route that still produces a congruence matrix, just not a
  Jacobian one.

The search is a bounded heuristic: a ``failed`` status means the budgeted
search found nothing, not that no global reduction exists.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

from .expr import (
    DEFAULT_SAMPLER, Domain, Expr, ExprError, Add, Exp, Integral, Log, Mul,
    Param, Pow, Rat, SamplerConfig, Var, ZERO, ONE, MINUS_ONE, ZeroVerdict,
    add, ast_size, differentiate, div, free_variables, integrate_in, is_zero,
    is_nonvanishing, mul, pow_, simplify, substitute, to_text, _diff,
)
from .poisson import (
    CanonicalTarget, Grid, JacobiReport, StructureMatrix, as_grid,
    canonical_matrix, check_casimir, check_jacobi, check_skew,
    congruence_transform, generic_rank, matmul,
)


# ---------------------------------------------------------------------------
# Elementary transformation matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Permute:
    """Swap rows i and j (and the paired columns).  0-based indices."""
    i: int
    j: int
    n: int


@dataclass(frozen=True)
class Scale:
    """Multiply row i (and column i) by a nonvanishing factor."""
    i: int
    factor: Expr
    n: int


@dataclass(frozen=True)
class Combine:
    """Add factor times row j to row i (and the paired columns)."""
    i: int
    factor: Expr
    j: int
    n: int


ElementaryTransform = Permute | Scale | Combine


def etm_matrix(t: ElementaryTransform) -> Grid:
    n = t.n
    rows = [[ONE if a == b else ZERO for b in range(n)] for a in range(n)]
    if isinstance(t, Permute):
        if t.i == t.j:
            raise ValueError("permutation indices must differ")
        rows[t.i][t.i] = rows[t.j][t.j] = ZERO
        rows[t.i][t.j] = rows[t.j][t.i] = ONE
    elif isinstance(t, Scale):
        rows[t.i][t.i] = simplify(t.factor)
    else:
        if t.i == t.j:
            raise ValueError("combination indices must differ")
        rows[t.i][t.j] = simplify(t.factor)
    return tuple(tuple(row) for row in rows)


def is_jetm(t: ElementaryTransform, domain: Domain) -> tuple[bool, str]:
    """Is this elementary matrix the Jacobian of a diffeomorphism?

    Permutations always are; a row scaling by xi(x) iff xi depends only on
    the scaled row's own variable; a row combination iff xi depends only on
    the source row's variable.
    """
    if isinstance(t, Permute):
        return True, "permutations are affine-linear diffeomorphisms"
    if isinstance(t, Scale):
        allowed = domain.variables[t.i]
        fv = free_variables(t.factor)
        if fv <= {allowed}:
            return True, f"scale factor depends only on {allowed}"
        return False, f"scale factor depends on {sorted(fv)}, not only {allowed}"
    allowed = domain.variables[t.j]
    fv = free_variables(t.factor)
    if fv <= {allowed}:
        return True, f"combination factor depends only on {allowed}"
    return False, f"combination factor depends on {sorted(fv)}, not only {allowed}"


def jetm_diffeomorphism(t: ElementaryTransform, domain: Domain) -> tuple[Expr, ...]:
    """The explicit coordinate change whose Jacobian is etm_matrix(t)."""
    ok, reason = is_jetm(t, domain)
    if not ok:
        raise ExprError(f"not a Jacobian elementary matrix: {reason}")
    xs = [Var(v) for v in domain.variables]
    ys = list(xs)
    if isinstance(t, Permute):
        ys[t.i], ys[t.j] = ys[t.j], ys[t.i]
    elif isinstance(t, Scale):
        ys[t.i] = integrate_in(t.factor, domain.variables[t.i], domain)
    else:
        ys[t.i] = add(xs[t.i], integrate_in(t.factor, domain.variables[t.j], domain))
    return tuple(simplify(y) for y in ys)


def apply_step(M: Grid, t: ElementaryTransform) -> Grid:
    """One paired row/column operation: E . M . E^T, simplified."""
    return congruence_transform(M, etm_matrix(t))


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceStep:
    transform: ElementaryTransform
    matrix_after: Grid
    jetm: bool
    restriction: str | None = None


@dataclass(frozen=True)
class ReductionTrace:
    initial: Grid
    steps: tuple[TraceStep, ...]

    @property
    def final(self) -> Grid:
        return self.steps[-1].matrix_after if self.steps else self.initial

    @property
    def K(self) -> Grid:
        n = len(self.initial)
        K = tuple(tuple(ONE if a == b else ZERO for b in range(n)) for a in range(n))
        for step in self.steps:
            K = matmul(etm_matrix(step.transform), K)
        return K

    def replay(self) -> Grid:
        M = self.initial
        for step in self.steps:
            M = apply_step(M, step.transform)
        return M


# ---------------------------------------------------------------------------
# Constant skew matrices: exact reduction
# ---------------------------------------------------------------------------

def _to_fraction_grid(A) -> list[list[Fraction]]:
    out = []
    for row in A:
        frow = []
        for e in row:
            if isinstance(e, Rat):
                frow.append(e.value)
            elif isinstance(e, Expr):
                s = simplify(e)
                if not isinstance(s, Rat):
                    raise ValueError("constant reduction needs rational entries")
                frow.append(s.value)
            else:
                frow.append(Fraction(e))
        out.append(frow)
    return out


def _frac_apply(M: list[list[Fraction]], t: ElementaryTransform) -> None:
    n = len(M)
    if isinstance(t, Permute):
        M[t.i], M[t.j] = M[t.j], M[t.i]
        for row in M:
            row[t.i], row[t.j] = row[t.j], row[t.i]
    elif isinstance(t, Scale):
        c = simplify(t.factor)
        assert isinstance(c, Rat)
        c = c.value
        M[t.i] = [c * v for v in M[t.i]]
        for row in M:
            row[t.i] *= c
    else:
        c = simplify(t.factor)
        assert isinstance(c, Rat)
        c = c.value
        M[t.i] = [a + c * b for a, b in zip(M[t.i], M[t.j])]
        for row in M:
            row[t.i] += c * row[t.j]


def _frac_row_apply(K: list[list[Fraction]], t: ElementaryTransform) -> None:
    if isinstance(t, Permute):
        K[t.i], K[t.j] = K[t.j], K[t.i]
    elif isinstance(t, Scale):
        c = simplify(t.factor).value
        K[t.i] = [c * v for v in K[t.i]]
    else:
        c = simplify(t.factor).value
        K[t.i] = [a + c * b for a, b in zip(K[t.i], K[t.j])]


def _frac_to_grid(M) -> Grid:
    return tuple(tuple(Rat(Fraction(v)) for v in row) for row in M)


def reduce_constant(A) -> ReductionTrace:
    """Exact congruence reduction of a rational skew matrix to S(n, r).

    Accepts a grid of Fractions/ints/rational Expr.  The whole computation is
    exact; no floating point is involved.
    """
    M = _to_fraction_grid(A)
    n = len(M)
    for i in range(n):
        for j in range(n):
            if M[i][j] != -M[j][i]:
                raise ValueError("matrix is not skew-symmetric")
    initial = _frac_to_grid(M)
    steps: list[TraceStep] = []

    def record(t: ElementaryTransform):
        _frac_apply(M, t)
        steps.append(TraceStep(t, _frac_to_grid(M), True, None))

    p = 0
    while p < n - 1:
        pivot = None
        for i in range(p, n):
            for j in range(i + 1, n):
                if M[i][j]:
                    pivot = (i, j)
                    break
            if pivot:
                break
        if pivot is None:
            break
        i, j = pivot
        if i != p:
            record(Permute(p, i, n))
        if j == p:
            j = i  # the old row p moved to position i
        if j != p + 1:
            record(Permute(p + 1, j, n))
        a = M[p][p + 1]
        if a != 1:
            record(Scale(p, Rat(1 / a), n))
        for k in range(p + 2, n):
            if M[k][p]:
                record(Combine(k, Rat(M[k][p]), p + 1, n))
            if M[k][p + 1]:
                record(Combine(k, Rat(-M[k][p + 1]), p, n))
        p += 2
    return ReductionTrace(initial, tuple(steps))


def constant_rank(trace: ReductionTrace) -> int:
    """Rank read off the reduced canonical form of a constant trace."""
    final = trace.final
    r = 0
    n = len(final)
    while r + 1 < n and final[r][r + 1] == ONE:
        r += 2
    return r


def _fraction_inverse(K: Grid) -> list[list[Fraction]] | None:
    """Exact inverse of an all-rational grid, or None if non-constant/singular."""
    n = len(K)
    M = []
    for row in K:
        frow = []
        for e in row:
            if not isinstance(e, Rat):
                return None
            frow.append(e.value)
        M.append(frow)
    inv = [[Fraction(int(a == b)) for b in range(n)] for a in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col]), None)
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        inv[col], inv[piv] = inv[piv], inv[col]
        c = M[col][col]
        M[col] = [v / c for v in M[col]]
        inv[col] = [v / c for v in inv[col]]
        for r in range(n):
            if r != col and M[r][col]:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
                inv[r] = [a - f * b for a, b in zip(inv[r], inv[col])]
    return inv


# ---------------------------------------------------------------------------
# Jacobian condition and quadrature recovery of the diffeomorphism
# ---------------------------------------------------------------------------

def jacobian_condition(K: Grid, domain: Domain,
                       cfg: SamplerConfig = DEFAULT_SAMPLER) -> JacobiReport:
    """Cross-derivative symmetry d K_ij / d x_k == d K_ik / d x_j."""
    xs = domain.variables
    n = len(K)
    undetermined = None
    for i in range(n):
        for j in range(n):
            for k in range(j + 1, n):
                resid = simplify(add(
                    differentiate(K[i][j], xs[k]),
                    mul(MINUS_ONE, differentiate(K[i][k], xs[j]))))
                v = is_zero(resid, domain, cfg)
                if v.outcome == "nonzero":
                    return JacobiReport("fail", (i + 1, j + 1, k + 1), resid, v)
                if v.outcome == "undetermined" and undetermined is None:
                    undetermined = JacobiReport(
                        "undetermined", (i + 1, j + 1, k + 1), resid, v)
    return undetermined or JacobiReport("pass")


def _diff_total(e: Expr, v: str) -> Expr:
    # Unevaluated integrals are functions of their own variable only, so the
    # cross-partial is zero rather than an error here.
    return simplify(_diff(simplify(e), v, strict_integral=False))


def integrate_jacobian(K: Grid, domain: Domain) -> tuple[Expr, ...]:
    """Recover y(x) with Jacobian K by successive univariate quadratures."""
    xs = domain.variables
    ys = []
    for i, row in enumerate(K):
        y = ZERO
        for j, v in enumerate(xs):
            residual = simplify(add(row[j], mul(MINUS_ONE, _diff_total(y, v))))
            earlier = free_variables(residual) & set(xs[:j])
            if earlier:
                raise ExprError(
                    f"row {i + 1}: quadratures are incompatible, residual for "
                    f"{v} still involves {sorted(earlier)}")
            y = simplify(add(y, integrate_in(residual, v, domain)))
        for j, v in enumerate(xs):
            if simplify(add(_diff_total(y, v), mul(MINUS_ONE, row[j]))) != ZERO:
                raise ExprError(
                    f"row {i + 1}: re-differentiation check failed for {v}")
        ys.append(y)
    return tuple(ys)


# ---------------------------------------------------------------------------
# Scalar factor extraction (new-time transformations)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarFactorReport:
    passed: bool
    nonvanishing: ZeroVerdict | None
    detail: str


def extract_scalar_factor(M: Grid, n: int, r: int, domain: Domain,
                          cfg: SamplerConfig = DEFAULT_SAMPLER) -> tuple[Expr, ScalarFactorReport]:
    """Test M == g * S(n, r) for a single scalar g; return g and a verdict."""
    target = canonical_matrix(n, r).matrix
    g = None
    for b in range(r // 2):
        cand = simplify(M[2 * b][2 * b + 1])
        if g is None:
            g = cand
        elif simplify(add(cand, mul(MINUS_ONE, g))) != ZERO:
            v = is_zero(add(cand, mul(MINUS_ONE, g)), domain, cfg)
            if v.outcome != "zero":
                return ONE, ScalarFactorReport(
                    False, None, f"block {b + 1} disagrees with the shared factor")
    if g is None:
        g = ONE
    for i in range(n):
        for j in range(n):
            expected = mul(g, target[i][j])
            diff = simplify(add(M[i][j], mul(MINUS_ONE, expected)))
            if diff != ZERO:
                v = is_zero(diff, domain, cfg)
                if v.outcome != "zero":
                    return ONE, ScalarFactorReport(
                        False, None, f"entry ({i + 1},{j + 1}) breaks the g*S pattern")
    nv = is_nonvanishing(g, domain, cfg)
    return g, ScalarFactorReport(nv.outcome == "nonvanishing", nv,
                                 "pattern matched" if nv.outcome == "nonvanishing"
                                 else "scalar factor is not verifiably nonvanishing")


# ---------------------------------------------------------------------------
# Reparametrization factor validity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReparamReport:
    passed: bool
    branch: str


def reparam_validity(g: Expr, n: int, r: int, casimir_vars, cfg: SamplerConfig = DEFAULT_SAMPLER,
                     domain: Domain | None = None) -> ReparamReport:
    """Is g a valid reparametrization factor for S(n, r)?

    Rank at most 2 admits any smooth factor; a factor depending only on the
    Casimir coordinates is always valid; constants are always valid; a
    symplectic structure of dimension >= 4 admits only constants.
    """
    g = simplify(g)
    if not free_variables(g):
        return ReparamReport(True, "constant")
    if casimir_vars and free_variables(g) <= set(casimir_vars):
        return ReparamReport(True, "casimir-dependent")
    if r <= 2:
        return ReparamReport(True, "rank-at-most-2")
    if r == n and n >= 4:
        return ReparamReport(False, "symplectic-nonconstant")
    if domain is None:
        domain = Domain.make(sorted(free_variables(g)))
    S = canonical_matrix(n, r).matrix
    scaled = tuple(tuple(mul(g, e) for e in row) for row in S)
    verdict = check_jacobi(StructureMatrix(scaled, domain), cfg)
    return ReparamReport(verdict.verdict == "pass", "direct-jacobi-check")


# ---------------------------------------------------------------------------
# Functional reduction search
# ---------------------------------------------------------------------------

class _Budget:
    def __init__(self, max_steps: int, backtracks: int):
        self.steps_left = max_steps
        self.backtracks_left = backtracks

    def step(self):
        self.steps_left -= 1
        if self.steps_left < 0:
            raise _BudgetExhausted("step budget exhausted")

    def backtrack(self):
        self.backtracks_left -= 1
        if self.backtracks_left < 0:
            raise _BudgetExhausted("backtrack budget exhausted")


class _BudgetExhausted(Exception):
    pass


class _RouteFailed(Exception):
    pass


@dataclass(frozen=True)
class DarbouxResult:
    status: str  # jacobian-congruence | ntt-congruence | congruence-only | failed
    source: StructureMatrix
    target: CanonicalTarget | None = None
    K: Grid | None = None
    trace: ReductionTrace | None = None
    y: tuple[Expr, ...] | None = None
    casimirs: tuple[Expr, ...] = ()
    ntt_factor: Expr | None = None
    ntt_factor_in_casimirs: Expr | None = None
    casimir_coordinate_names: tuple[str, ...] = ()
    branch: str | None = None
    messages: tuple[str, ...] = ()
    symbolic_identity: bool = False


def casimirs_from(result: DarbouxResult,
                  cfg: SamplerConfig = DEFAULT_SAMPLER) -> tuple[Expr, ...]:
    """Last n - r components of y; each is re-checked against the source matrix."""
    if result.y is None or result.target is None:
        raise ValueError("result carries no diffeomorphism")
    cs = tuple(result.y[result.target.r:])
    for c in cs:
        verdict = check_casimir(result.source, c, cfg)
        if verdict.verdict == "fail":
            raise RuntimeError(
                f"extracted invariant {to_text(c)} fails the Casimir PDEs "
                "(upstream reduction bug)")
    return cs


def _single_var(e: Expr) -> str | None:
    fv = free_variables(e)
    return next(iter(fv)) if len(fv) == 1 else None


def _nonvanishing_ok(e, domain, cfg) -> bool:
    return is_nonvanishing(e, domain, cfg).outcome == "nonvanishing"


def _split_exp_arg(arg: Expr, u: str):
    """Split the argument of an exp into (u-only part, u-free part); None if mixed."""
    terms = arg.terms if isinstance(arg, Add) else (arg,)
    upart, rest = [], []
    for t in terms:
        fv = free_variables(t)
        if u in fv:
            if fv != {u}:
                return None
            upart.append(t)
        else:
            rest.append(t)
    return add(*upart) if upart else ZERO, add(*rest) if rest else ZERO


def _factor_var_part(base: Expr, q: Fraction, u: str):
    """Split base**q into (part in u, u-free part); None when inseparable."""
    whole = pow_(base, q)
    fv = free_variables(whole)
    if u not in fv:
        return ONE, whole
    if fv <= {u}:
        return whole, ONE
    if isinstance(base, Exp):
        split = _split_exp_arg(simplify(mul(Rat(q), base.arg)), u)
        if split is None:
            return None
        up, rest = split
        return (Exp(up) if up != ZERO else ONE,
                Exp(rest) if rest != ZERO else ONE)
    return None


def _term_var_part(term: Expr, u: str):
    """The factor of a single product term that carries all u dependence."""
    factors = term.factors if isinstance(term, Mul) else (term,)
    parts = []
    for f in factors:
        base, q = (f.base, f.exponent) if isinstance(f, Pow) else (f, Fraction(1))
        split = _factor_var_part(base, q, u)
        if split is None:
            return None
        parts.append(split[0])
    return mul(*parts) if parts else ONE


def _entry_var_part(e: Expr, u: str):
    """Common u-dependent factor across all terms of an entry, or None."""
    s = simplify(e)
    terms = s.terms if isinstance(s, Add) else (s,)
    part = None
    for t in terms:
        p = _term_var_part(t, u)
        if p is None:
            return None
        if part is None:
            part = p
        elif p != part:
            return None
    return part


def _split_between(a: Expr, u: str | None, v: str | None):
    """Split a = g*h with g depending at most on u and h at most on v."""
    a = simplify(a)
    fv = free_variables(a)
    if u is not None and fv <= {u}:
        return a, ONE
    if v is not None and fv <= {v}:
        return ONE, a
    if isinstance(a, Add):
        return None
    factors = a.factors if isinstance(a, Mul) else (a,)
    g_parts, h_parts = [], []
    for f in factors:
        ffv = free_variables(f)
        if not ffv:
            g_parts.append(f)
        elif u is not None and ffv <= {u}:
            g_parts.append(f)
        elif v is not None and ffv <= {v}:
            h_parts.append(f)
        elif isinstance(f, Exp) or (isinstance(f, Pow) and isinstance(f.base, Exp)):
            base, q = (f.base, f.exponent) if isinstance(f, Pow) else (f, Fraction(1))
            arg = simplify(mul(Rat(q), base.arg))
            terms = arg.terms if isinstance(arg, Add) else (arg,)
            gu, hv = [], []
            ok = True
            for t in terms:
                tfv = free_variables(t)
                if not tfv or (u is not None and tfv <= {u}):
                    gu.append(t)
                elif v is not None and tfv <= {v}:
                    hv.append(t)
                else:
                    ok = False
            if not ok:
                return None
            if gu:
                g_parts.append(Exp(add(*gu)))
            if hv:
                h_parts.append(Exp(add(*hv)))
        else:
            return None
    return mul(*g_parts) if g_parts else ONE, mul(*h_parts) if h_parts else ONE


class _Search:
    """Backtracking pivot search over paired elementary transformations."""

    def __init__(self, J: StructureMatrix, cfg: SamplerConfig, budget: _Budget,
                 jetm_only: bool):
        self.domain = J.domain
        self.cfg = cfg
        self.budget = budget
        self.jetm_only = jetm_only
        self.n = J.n
        self.deepest: list[TraceStep] | None = None
        self.failure = "no admissible pivot"

    # -- coordinate tracking (Jacobian mode) --------------------------------

    def _combine_update(self, coords, i, xi, j):
        """coords after adding the combine step, or None if not Jacobian-composable."""
        xi = simplify(xi)
        if not free_variables(xi):
            out = list(coords)
            out[i] = simplify(add(coords[i], mul(xi, coords[j])))
            return out
        m = _single_var(xi)
        if m is None:
            return None
        cj = coords[j]
        if not free_variables(cj) <= {m}:
            return None
        d = differentiate(cj, m)
        if not _nonvanishing_ok(d, self.domain, self.cfg):
            return None
        out = list(coords)
        out[i] = simplify(add(coords[i], integrate_in(mul(xi, d), m, self.domain)))
        return out

    def _scale_update(self, coords, i, xi):
        xi = simplify(xi)
        if not free_variables(xi):
            if xi == ZERO:
                return None
            out = list(coords)
            out[i] = simplify(mul(xi, coords[i]))
            return out
        m = _single_var(xi)
        if m is None:
            return None
        ci = coords[i]
        if not free_variables(ci) <= {m}:
            return None
        d = differentiate(ci, m)
        if not _nonvanishing_ok(d, self.domain, self.cfg):
            return None
        out = list(coords)
        out[i] = simplify(integrate_in(mul(xi, d), m, self.domain))
        return out

    # -- step application ---------------------------------------------------

    def _push(self, state, t: ElementaryTransform, coords):
        self.budget.step()
        M, steps = state
        M = apply_step(M, t)
        restriction = None
        if isinstance(t, Scale) and not isinstance(simplify(t.factor), Rat):
            restriction = f"requires {to_text(t.factor)} nonvanishing"
        steps = steps + [TraceStep(t, M, is_jetm(t, self.domain)[0], restriction)]
        if self.deepest is None or len(steps) > len(self.deepest):
            self.deepest = steps
        return (M, steps), coords

    # -- pivot handling -----------------------------------------------------

    def _entry_zero(self, e) -> bool:
        return is_zero(e, self.domain, self.cfg).outcome == "zero"

    def _candidates(self, M, p):
        cands = []
        for i in range(p, self.n):
            for j in range(i + 1, self.n):
                e = M[i][j]
                if self._entry_zero(e):
                    continue
                if not _nonvanishing_ok(e, self.domain, self.cfg):
                    continue
                s = simplify(e)
                if not free_variables(s):
                    cls = 0
                elif _single_var(s) is not None:
                    cls = 1
                else:
                    cls = 2
                cands.append(((cls, ast_size(s), i, j), (i, j)))
        cands.sort(key=lambda c: c[0])
        return [c[1] for c in cands]

    def _block_done(self, M, p) -> bool:
        return all(self._entry_zero(M[i][j])
                   for i in range(p, self.n) for j in range(i + 1, self.n))

    def _reduce_block(self, state, coords, p):
        M, _ = state
        if p >= self.n - 1 or self._block_done(M, p):
            return state, coords, p
        first = True
        for (i, j) in self._candidates(M, p):
            if not first:
                self.budget.backtrack()
            first = False
            try:
                out = self._try_pivot(state, coords, p, i, j)
            except _RouteFailed:
                continue
            return out
        if first:
            self.failure = (f"no usable pivot in the block starting at row {p + 1} "
                            "(entries not verifiably nonvanishing)")
        else:
            self.failure = (f"every pivot in the block starting at row {p + 1} "
                            "led to an inadmissible transformation")
        raise _RouteFailed(self.failure)

    def _try_pivot(self, state, coords, p, i, j):
        if i != p:
            state, coords = self._permute(state, coords, p, i)
            if j == p:
                j = i
        if j != p + 1:
            state, coords = self._permute(state, coords, p + 1, j)
        state, coords = self._eliminate(state, coords, p)
        state, coords = self._normalize(state, coords, p)
        return self._reduce_block(state, coords, p + 2)

    def _permute(self, state, coords, a, b):
        t = Permute(a, b, self.n)
        state, coords = self._push(state, t, coords)
        out = list(coords)
        out[a], out[b] = out[b], out[a]
        return state, out

    def _eliminate(self, state, coords, p):
        for k in range(p + 2, self.n):
            M, _ = state
            if not self._entry_zero(M[k][p]):
                xi = div(mul(MINUS_ONE, M[k][p]), M[p + 1][p])
                state, coords = self._combine(state, coords, k, xi, p + 1)
            M, _ = state
            if not self._entry_zero(M[k][p + 1]):
                xi = div(mul(MINUS_ONE, M[k][p + 1]), M[p][p + 1])
                state, coords = self._combine(state, coords, k, xi, p)
        return state, coords

    def _combine(self, state, coords, i, xi, j):
        xi = simplify(xi)
        if self.jetm_only:
            new_coords = self._combine_update(coords, i, xi, j)
            if new_coords is None:
                raise _RouteFailed("combination factor is not Jacobian-composable")
        else:
            new_coords = coords
        t = Combine(i, xi, j, self.n)
        state, _ = self._push(state, t, coords)
        return state, new_coords

    def _scale(self, state, coords, i, xi):
        xi = simplify(xi)
        if not _nonvanishing_ok(xi, self.domain, self.cfg):
            raise _RouteFailed("scale factor is not verifiably nonvanishing")
        if self.jetm_only:
            new_coords = self._scale_update(coords, i, xi)
            if new_coords is None:
                raise _RouteFailed("scale factor is not Jacobian-composable")
        else:
            new_coords = coords
        t = Scale(i, xi, self.n)
        state, _ = self._push(state, t, coords)
        return state, new_coords

    def _normalize(self, state, coords, p):
        M, _ = state
        a = simplify(M[p][p + 1])
        if a == ONE:
            return state, coords
        if not free_variables(a) or not self.jetm_only:
            return self._scale(state, coords, p, div(ONE, a))
        u = _single_var(coords[p]) if free_variables(coords[p]) else None
        v = _single_var(coords[p + 1]) if free_variables(coords[p + 1]) else None
        split = _split_between(a, u, v)
        if split is None:
            raise _RouteFailed("pivot does not separate between the two block variables")
        g, h = split
        if g != ONE:
            state, coords = self._scale(state, coords, p, div(ONE, g))
        if h != ONE:
            state, coords = self._scale(state, coords, p + 1, div(ONE, h))
        M, _ = state
        if simplify(M[p][p + 1]) != ONE:
            raise _RouteFailed("pivot normalization did not reach 1 symbolically")
        return state, coords

    # -- entry points -------------------------------------------------------

    def run(self, M: Grid):
        coords = [Var(vn) for vn in self.domain.variables]
        steps: list[TraceStep] = []
        state = (M, steps)
        if self.jetm_only:
            state, coords = self._prephase(state, coords)
        state, coords, r = self._reduce_block(state, coords, 0)
        return state[0], state[1], coords, r

    def _prephase(self, state, coords):
        """Row-by-row removal of each row's own-variable factor (all Jacobian steps)."""
        for _ in range(3):
            changed = False
            M, _ = state
            for i in range(self.n):
                u = _single_var(coords[i])
                if u is None:
                    continue
                part = None
                seen = False
                for j in range(self.n):
                    if i == j or self._entry_zero(M[i][j]):
                        continue
                    p = _entry_var_part(M[i][j], u)
                    if p is None or (seen and p != part):
                        part = None
                        break
                    part, seen = p, True
                if part is None or part == ONE or not seen:
                    continue
                if not _nonvanishing_ok(part, self.domain, self.cfg):
                    continue
                try:
                    state, coords = self._scale(state, coords, i, div(ONE, part))
                    changed = True
                    M, _ = state
                except _RouteFailed:
                    continue
            if not changed:
                break
        return state, coords


# ---------------------------------------------------------------------------
# Top-level reduction
# ---------------------------------------------------------------------------

def reduce_functional(J: StructureMatrix, require_jacobian: bool = True,
                      allow_ntt: bool = False, max_steps: int | None = None,
                      backtrack_budget: int = 64,
                      cfg: SamplerConfig = DEFAULT_SAMPLER) -> DarbouxResult:
    """Search for a Darboux reduction of J by elementary congruences.

    Route order: Jacobian-only steps first, then (with ``allow_ntt``) a
    prescale/common-factor route ending in a time reparametrization, then an
    unrestricted congruence.  With ``require_jacobian`` false the Jacobian
    route is skipped and whatever congruence is found is reported (upgraded
    if its matrix happens to satisfy the Jacobian conditions).
    """
    skew = check_skew(J, cfg)
    if skew.verdict == "fail":
        raise ValueError(f"input is not skew-symmetric at {skew.location}")
    jac = check_jacobi(J, cfg)
    if jac.verdict == "fail":
        raise ValueError(f"input violates the Jacobi PDEs at triple {jac.location}")
    r_obs, rank_report = generic_rank(J, cfg)
    messages: list[str] = []
    if not rank_report.consistent:
        return DarbouxResult("failed", J, messages=(
            "sampled rank is not constant on the domain "
            f"(observed ranks {sorted(set(rank_report.ranks))}); "
            "the reduction requires constant rank",))
    if max_steps is None:
        max_steps = 12 * J.n * J.n

    if require_jacobian:
        try:
            budget = _Budget(max_steps, backtrack_budget)
            search = _Search(J, cfg, budget, jetm_only=True)
            final, steps, coords, r = search.run(J.entries)
            return _finish_jacobian(J, steps, r, cfg, messages)
        except (_RouteFailed, _BudgetExhausted, ExprError) as exc:
            messages.append(f"Jacobian route failed: {exc}")

    if allow_ntt:
        result = _ntt_route(J, r_obs, cfg, messages)
        if result is not None:
            return result

    try:
        budget = _Budget(max_steps, backtrack_budget)
        search = _Search(J, cfg, budget, jetm_only=False)
        final, steps, coords, r = search.run(J.entries)
        trace = ReductionTrace(J.entries, tuple(steps))
        K = trace.K
        jc = jacobian_condition(K, J.domain, cfg)
        if not require_jacobian and jc.verdict == "pass":
            return _finish_jacobian(J, steps, r, cfg, messages)
        messages.append(
            "congruence matrix is not a Jacobian "
            f"(cross-derivative condition fails at {jc.location})"
            if jc.verdict == "fail" else
            "congruence matrix was not verified as a Jacobian")
        return DarbouxResult(
            "congruence-only", J, canonical_matrix(J.n, r), K, trace,
            None, (), messages=tuple(messages),
            symbolic_identity=_is_target(congruence_transform(J.entries, K), J.n, r))
    except (_RouteFailed, _BudgetExhausted, ExprError) as exc:
        messages.append(f"unrestricted route failed: {exc}")

    return DarbouxResult("failed", J, messages=tuple(messages))


def _is_target(T: Grid, n: int, r: int) -> bool:
    S = canonical_matrix(n, r).matrix
    return all(simplify(add(T[i][j], mul(MINUS_ONE, S[i][j]))) == ZERO
               for i in range(n) for j in range(n))


def _finish_jacobian(J: StructureMatrix, steps, r: int, cfg, messages) -> DarbouxResult:
    trace = ReductionTrace(J.entries, tuple(steps))
    K = trace.K
    jc = jacobian_condition(K, J.domain, cfg)
    if jc.verdict != "pass":
        raise _RouteFailed(
            f"accumulated matrix failed the Jacobian condition at {jc.location}")
    y = integrate_jacobian(K, J.domain)
    target = canonical_matrix(J.n, r)
    result = DarbouxResult(
        "jacobian-congruence", J, target, K, trace, y,
        tuple(y[r:]), messages=tuple(messages),
        symbolic_identity=_is_target(congruence_transform(J.entries, K), J.n, r))
    casimirs_from(result, cfg)
    return result


def _extract_common_factor(M: Grid):
    """Largest nonconstant factor shared by every nonzero single-term entry."""
    common: dict | None = None
    for row in M:
        for e in row:
            s = simplify(e)
            if s == ZERO:
                continue
            if isinstance(s, Add):
                return ONE, M
            factors = s.factors if isinstance(s, Mul) else (s,)
            fd = {}
            for f in factors:
                base, q = (f.base, f.exponent) if isinstance(f, Pow) else (f, Fraction(1))
                if isinstance(base, Rat):
                    continue
                fd[base] = fd.get(base, Fraction(0)) + q
            if common is None:
                common = fd
            else:
                merged = {}
                for base, q in common.items():
                    if base in fd:
                        q2 = fd[base]
                        if q > 0 and q2 > 0:
                            merged[base] = min(q, q2)
                        elif q < 0 and q2 < 0:
                            merged[base] = max(q, q2)
                common = merged
    if not common:
        return ONE, M
    h = mul(*[pow_(b, q) for b, q in common.items()])
    hinv = pow_(h, -1)
    A = tuple(tuple(simplify(mul(e, hinv)) for e in row) for row in M)
    return h, A


def _ntt_route(J: StructureMatrix, r_obs: int, cfg: SamplerConfig,
               messages: list) -> DarbouxResult | None:
    domain = J.domain
    n = J.n
    prescale_options = [[]]
    diag = []
    for i, v in enumerate(domain.variables):
        if domain.sign_of(v) in ("positive", "negative"):
            diag.append(Scale(i, Var(v), n))
    if diag:
        prescale_options.append(diag)
    for prescale in prescale_options:
        M = J.entries
        steps: list[TraceStep] = []
        ok = True
        for t in prescale:
            if not _nonvanishing_ok(t.factor, domain, cfg):
                ok = False
                break
            M = apply_step(M, t)
            steps.append(TraceStep(t, M, True, None))
        if not ok:
            continue
        label = "prescaled-by-coordinates" if prescale else "direct"

        # The matrix may already be a scalar multiple of the target.
        result = _try_finish_ntt(J, list(steps), M, r_obs, label, cfg, messages)
        if result is not None:
            return result

        # Otherwise pull out the factor shared by every entry and reduce the
        # constant remainder exactly.
        h, A = _extract_common_factor(M)
        if h == ONE:
            continue
        if not all(isinstance(e, Rat) for row in A for e in row):
            continue
        try:
            const_trace = reduce_constant(A)
        except ValueError:
            continue
        r = constant_rank(const_trace)
        M2 = M
        steps2 = list(steps)
        for step in const_trace.steps:
            t = step.transform
            M2 = apply_step(M2, t)
            steps2.append(TraceStep(t, M2, True, None))
        result = _try_finish_ntt(J, steps2, M2, r,
                                 label + "; common-factor", cfg, messages)
        if result is not None:
            return result
    messages.append("new-time route: no prescaling produced a scalar multiple "
                    "of the canonical form")
    return None


def _try_finish_ntt(J: StructureMatrix, steps: list, M: Grid, r: int,
                    branch: str, cfg: SamplerConfig,
                    messages: list) -> DarbouxResult | None:
    domain = J.domain
    n = J.n
    g, report = extract_scalar_factor(M, n, r, domain, cfg)
    if not report.passed:
        return None
    trace = ReductionTrace(J.entries, tuple(steps))
    K = trace.K
    jc = jacobian_condition(K, domain, cfg)
    if jc.verdict != "pass":
        messages.append("new-time route: accumulated matrix is not a Jacobian")
        return None
    try:
        y = integrate_jacobian(K, domain)
    except ExprError as exc:
        messages.append(f"new-time route: {exc}")
        return None
    target = canonical_matrix(n, r)
    g_in_y, casimir_names = _rewrite_in_new_coordinates(g, K, domain, r)
    validity = reparam_validity(
        g_in_y if g_in_y is not None else g, n, r,
        casimir_names[r:] if casimir_names else (), cfg)
    if not validity.passed:
        messages.append(
            f"new-time route: factor {to_text(g)} is not a valid "
            f"reparametrization factor ({validity.branch})")
        return None
    sign_note = _sign_branch_note(g, domain, cfg)
    if sign_note:
        branch += "; " + sign_note
    result = DarbouxResult(
        "ntt-congruence", J, target, K, trace, y, tuple(y[r:]),
        ntt_factor=g, ntt_factor_in_casimirs=g_in_y,
        casimir_coordinate_names=tuple(casimir_names[r:]) if casimir_names else (),
        branch=branch, messages=tuple(messages),
        symbolic_identity=True)
    casimirs_from(result, cfg)
    return result


def _sign_branch_note(g: Expr, domain: Domain, cfg) -> str | None:
    v = is_nonvanishing(g, domain, cfg)
    if v.outcome != "nonvanishing":
        return None
    restricted = [name for name in free_variables(g)
                  if domain.sign_of(name) in ("positive", "negative")]
    if restricted:
        signs = ", ".join(f"{name} {domain.sign_of(name)}" for name in sorted(restricted))
        return f"sign branch fixed by domain assumptions ({signs})"
    return None


def _rewrite_in_new_coordinates(g: Expr, K: Grid, domain: Domain, r: int):
    """Express g in the Darboux coordinates when K is a constant matrix."""
    inv = _fraction_inverse(K)
    if inv is None:
        return None, ()
    base = "y"
    while any(f"{base}{k + 1}" in domain.variables for k in range(len(K))):
        base += "y"
    names = tuple(f"{base}{k + 1}" for k in range(len(K)))
    mapping = {
        domain.variables[i]: add(*[mul(Rat(inv[i][j]), Var(names[j]))
                                   for j in range(len(K))])
        for i in range(len(K))
    }
    return substitute(g, mapping), names
