"""Numeric falsification of reduction claims, and trajectory conservation.

Every symbolic identity produced by the reduction is spot-checked in floating
point at seeded interior points: the congruence identity K.J.K^T = S (or
g*S), the cross-derivative condition making K a Jacobian, the agreement of
the recovered coordinates' finite-difference Jacobian with K, and the
invariance equations J.grad(C) = 0 for each Casimir.  A fixed-step classical
4th-order integrator then confirms conservation of the Hamiltonian and the
Casimirs along actual trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import (
    Domain, EvaluationError, Expr, SamplerConfig, add, compile_functions,
    differentiate, evaluate, mul, simplify,
)
from .poisson import StructureMatrix, canonical_matrix
from .congruence import DarbouxResult

DEFAULT_VERIFY = SamplerConfig(seed=0, samples=100, tolerance=1e-8)
_FD_BASE = 1e-6


@dataclass(frozen=True)
class IdentityRecord:
    name: str
    samples: int
    max_residual: float
    worst_point: tuple[float, ...]
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    tolerance: float
    seed: int
    records: tuple[IdentityRecord, ...]

    def record(self, name: str) -> IdentityRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(name)


def _sample_points(domain: Domain, cfg: SamplerConfig, probe) -> list:
    """Interior points where ``probe`` evaluates finitely; retries near poles."""
    rng = np.random.default_rng(cfg.seed)
    points = []
    attempts = 0
    while len(points) < cfg.samples and attempts < cfg.samples * 20:
        attempts += 1
        point, params = domain.sample(rng)
        try:
            probe(point, params)
        except (EvaluationError, OverflowError, ZeroDivisionError):
            continue
        points.append((point, params))
    if len(points) < cfg.samples:
        raise RuntimeError(
            "sampling exhausted near poles: only "
            f"{len(points)}/{cfg.samples} evaluable points found")
    return points


def _grid_at(G, point, params, domain) -> np.ndarray:
    return np.array([[evaluate(e, point, params, domain) for e in row]
                     for row in G], dtype=float)


def _fd_step(x: float) -> float:
    return _FD_BASE * (1.0 + abs(x))


def _central(fn, point, var, params):
    x = point[var]
    h = _fd_step(x)
    hi = dict(point)
    lo = dict(point)
    hi[var] = x + h
    lo[var] = x - h
    return (fn(hi, params) - fn(lo, params)) / (2.0 * h)


def verify_reduction(J: StructureMatrix, result: DarbouxResult,
                     cfg: SamplerConfig = DEFAULT_VERIFY) -> VerificationReport:
    """Sample every identity claimed by the result; pass iff all residuals small."""
    if result.status == "failed":
        raise ValueError("a failed result carries no identities to verify")
    if result.K is None or result.target is None:
        raise ValueError("result carries no congruence matrix")
    domain = J.domain
    n, r = result.target.n, result.target.r
    K = result.K
    S = np.array([[evaluate(e, {}, {}, domain) for e in row]
                  for row in canonical_matrix(n, r).matrix])
    g = result.ntt_factor

    def probe(point, params):
        _grid_at(K, point, params, domain)
        _grid_at(J.entries, point, params, domain)
        if g is not None:
            evaluate(g, point, params, domain)
        if result.y is not None:
            for ye in result.y:
                evaluate(ye, point, params, domain)

    points = _sample_points(domain, cfg, probe)
    xs = domain.variables
    records = []

    def run(name, residual_at):
        worst = 0.0
        worst_point = points[0][0]
        for point, params in points:
            res = residual_at(point, params)
            if res > worst:
                worst, worst_point = res, point
        records.append(IdentityRecord(
            name, len(points), worst,
            tuple(worst_point[v] for v in xs), worst <= cfg.tolerance))

    def congruence_residual(point, params):
        Kv = _grid_at(K, point, params, domain)
        Jv = _grid_at(J.entries, point, params, domain)
        target = S if g is None else evaluate(g, point, params, domain) * S
        R = Kv @ Jv @ Kv.T - target
        scale = max(1.0, float(np.max(np.abs(Kv @ Jv @ Kv.T))))
        return float(np.max(np.abs(R))) / scale

    run("congruence-identity", congruence_residual)

    if result.status in ("jacobian-congruence", "ntt-congruence"):
        entry_fns = [[(lambda p, q, e=e: evaluate(e, p, q, domain))
                      for e in row] for row in K]

        def jacobian_residual(point, params):
            worst = 0.0
            for i in range(n):
                for j in range(n):
                    for k in range(j + 1, n):
                        d1 = _central(entry_fns[i][j], point, xs[k], params)
                        d2 = _central(entry_fns[i][k], point, xs[j], params)
                        worst = max(worst, abs(d1 - d2) / (1.0 + abs(d1)))
            return worst

        run("jacobian-condition", jacobian_residual)

    if result.y is not None:
        y_fns = [(lambda p, q, e=e: evaluate(e, p, q, domain)) for e in result.y]

        def diffeo_residual(point, params):
            Kv = _grid_at(K, point, params, domain)
            worst = 0.0
            for i in range(n):
                for j in range(n):
                    d = _central(y_fns[i], point, xs[j], params)
                    worst = max(worst, abs(d - Kv[i][j]) / (1.0 + abs(Kv[i][j])))
            return worst

        run("coordinate-jacobian", diffeo_residual)

    for idx, C in enumerate(result.casimirs):
        grad = [differentiate(C, v) for v in xs]

        def casimir_residual(point, params, grad=grad):
            Jv = _grid_at(J.entries, point, params, domain)
            gv = np.array([evaluate(gc, point, params, domain) for gc in grad])
            flow = Jv @ gv
            scale = max(1.0, float(np.max(np.abs(Jv))) * max(1.0, float(np.max(np.abs(gv)))))
            return float(np.max(np.abs(flow))) / scale

        run(f"casimir-{idx + 1}", casimir_residual)

    return VerificationReport(all(rec.passed for rec in records),
                              cfg.tolerance, cfg.seed, tuple(records))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    times: tuple[float, ...]
    states: tuple[tuple[float, ...], ...]
    hamiltonian_values: tuple[float, ...]
    casimir_values: tuple[tuple[float, ...], ...]  # one series per Casimir
    step: float
    method: str = "rk4"
    truncated: bool = False
    truncation_reason: str | None = None


def _inside(domain: Domain, x) -> bool:
    for value, name in zip(x, domain.variables):
        if not math.isfinite(value):
            return False
        s = domain.sign_of(name)
        if s == "positive" and value <= 0:
            return False
        if s == "negative" and value >= 0:
            return False
        if s == "nonzero" and value == 0:
            return False
    return True


def simulate(J: StructureMatrix, H: Expr, x0, t_end: float, h: float,
             casimirs=(), params=None) -> Trajectory:
    """Fixed-step 4th-order integration of x' = J(x) . grad(H)(x)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    domain = J.domain
    params = dict(params or {})
    x0 = [float(v) for v in x0]
    if len(x0) != J.n:
        raise ValueError("initial state dimension mismatch")
    if not _inside(domain, x0):
        raise ValueError("initial state lies outside the domain")
    xs = domain.variables
    grad = [differentiate(H, v) for v in xs]
    rhs_exprs = [simplify(add(*[mul(J.entries[i][j], grad[j]) for j in range(J.n)]))
                 for i in range(J.n)]
    rhs = compile_functions(rhs_exprs, domain, params)
    observers = compile_functions([H, *casimirs], domain, params)

    steps = max(1, round(t_end / h))
    times = [0.0]
    states = [tuple(x0)]
    obs0 = observers(x0)
    h_vals = [obs0[0]]
    c_vals = [[v] for v in obs0[1:]]
    truncated = False
    reason = None
    x = list(x0)
    for k in range(steps):
        try:
            k1 = rhs(x)
            k2 = rhs([xi + 0.5 * h * ki for xi, ki in zip(x, k1)])
            k3 = rhs([xi + 0.5 * h * ki for xi, ki in zip(x, k2)])
            k4 = rhs([xi + h * ki for xi, ki in zip(x, k3)])
        except (EvaluationError, OverflowError, ValueError, ZeroDivisionError) as exc:
            truncated, reason = True, f"integrator left the evaluable region: {exc}"
            break
        xn = [xi + (h / 6.0) * (a + 2 * b + 2 * c + d)
              for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]
        if not _inside(domain, xn):
            truncated, reason = True, "state exited the domain"
            break
        x = xn
        times.append((k + 1) * h)
        states.append(tuple(x))
        obs = observers(x)
        h_vals.append(obs[0])
        for series, v in zip(c_vals, obs[1:]):
            series.append(v)
    return Trajectory(tuple(times), tuple(states), tuple(h_vals),
                      tuple(tuple(s) for s in c_vals), h,
                      truncated=truncated, truncation_reason=reason)


@dataclass(frozen=True)
class ConservationReport:
    hamiltonian_drift: float
    casimir_drifts: tuple[float, ...]
    truncated: bool

    @property
    def max_drift(self) -> float:
        return max((self.hamiltonian_drift, *self.casimir_drifts))


def conservation_report(tr: Trajectory, H: Expr | None = None,
                        casimirs=None) -> ConservationReport:
    """Maximum drift of H and each Casimir over the recorded trajectory."""
    if not tr.times:
        raise ValueError("trajectory is empty")

    def drift(series) -> float:
        return max(abs(v - series[0]) for v in series)

    return ConservationReport(
        drift(tr.hamiltonian_values),
        tuple(drift(series) for series in tr.casimir_values),
        tr.truncated)
