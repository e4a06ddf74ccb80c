"""Batch front-end: check, rank, reduce, verify, and simulate from files.

Problems are JSON documents holding the variable list, sign assumptions, the
structure matrix as expression strings, and optionally a Hamiltonian and
known Casimirs.  ``reduce`` writes a self-contained JSON result (congruence
matrix, coordinates, Casimirs, transformation trace) that ``verify`` re-reads
and re-checks numerically without any in-process state.

Exit codes are a stable contract: 0 success, 1 verification/check failure,
2 input error, 3 congruence-only reduction, 4 failed reduction.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from . import __version__
from .expr import Domain, Expr, ExprError, SamplerConfig, parse, simplify, to_text
from .poisson import (
    StructureMatrix, check_casimir, check_jacobi, check_skew, generic_rank,
)
from .congruence import (
    Combine, DarbouxResult, ElementaryTransform, Permute, ReductionTrace,
    Scale, TraceStep, apply_step, canonical_matrix, is_jetm, reduce_functional,
)
from .verify import conservation_report, simulate, verify_reduction

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_CONGRUENCE_ONLY = 3
EXIT_FAILED = 4

FORMAT_VERSION = 1


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------

def load_problem(path: str) -> StructureMatrix:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc
    return problem_from_dict(doc, path)


def problem_from_dict(doc: dict, origin: str = "<problem>") -> StructureMatrix:
    if not isinstance(doc, dict):
        raise InputError(f"{origin}: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise InputError(f"{origin}: unsupported format_version {version!r}")
    try:
        variables = list(doc["variables"])
        matrix = doc["matrix"]
    except KeyError as exc:
        raise InputError(f"{origin}: missing required field {exc}") from exc
    signs = dict(doc.get("domain") or {})
    parameters = dict(doc.get("parameters") or {})
    try:
        domain = Domain.make(variables, signs, parameters)
    except ValueError as exc:
        raise InputError(f"{origin}: {exc}") from exc
    n = len(variables)
    if len(matrix) != n or any(len(row) != n for row in matrix):
        raise InputError(f"{origin}: matrix must be {n}x{n} to match the variables")

    def parse_field(text: str, what: str) -> Expr:
        try:
            return parse(text, domain)
        except ExprError as exc:
            raise InputError(f"{origin}: cannot parse {what}: {exc}") from exc

    grid = [[parse_field(matrix[i][j], f"matrix entry ({i + 1},{j + 1})")
             for j in range(n)] for i in range(n)]
    hamiltonian = None
    if doc.get("hamiltonian") is not None:
        hamiltonian = parse_field(doc["hamiltonian"], "hamiltonian")
    try:
        J = StructureMatrix.from_rows(grid, domain, hamiltonian)
    except ValueError as exc:
        raise InputError(f"{origin}: {exc}") from exc
    return J


def load_known_casimirs(path: str, J: StructureMatrix) -> list[Expr]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out = []
    for i, text in enumerate(doc.get("known_casimirs") or []):
        try:
            out.append(parse(text, J.domain))
        except ExprError as exc:
            raise InputError(f"cannot parse known_casimirs[{i}]: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------

def _transform_to_dict(t: ElementaryTransform, domain: Domain) -> dict:
    jetm, _ = is_jetm(t, domain)
    if isinstance(t, Permute):
        return {"kind": "permute", "i": t.i + 1, "j": t.j + 1, "jetm": jetm}
    if isinstance(t, Scale):
        return {"kind": "scale", "i": t.i + 1, "factor": to_text(t.factor),
                "jetm": jetm}
    return {"kind": "combine", "i": t.i + 1, "j": t.j + 1,
            "factor": to_text(t.factor), "jetm": jetm}


def _transform_from_dict(d: dict, domain: Domain, n: int) -> ElementaryTransform:
    kind = d.get("kind")
    if kind == "permute":
        return Permute(d["i"] - 1, d["j"] - 1, n)
    if kind == "scale":
        return Scale(d["i"] - 1, parse(d["factor"], domain), n)
    if kind == "combine":
        return Combine(d["i"] - 1, parse(d["factor"], domain), d["j"] - 1, n)
    raise InputError(f"unknown trace step kind {kind!r}")


def result_to_dict(result: DarbouxResult, seed: int) -> dict:
    domain = result.source.domain
    doc = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "seed": seed,
        "status": result.status,
        "target": ({"n": result.target.n, "r": result.target.r}
                   if result.target else None),
        "K": ([[to_text(e) for e in row] for row in result.K]
              if result.K is not None else None),
        "y": ([to_text(e) for e in result.y] if result.y is not None else None),
        "casimirs": [to_text(c) for c in result.casimirs],
        "ntt_factor": (to_text(result.ntt_factor)
                       if result.ntt_factor is not None else None),
        "reparametrization": (f"dtau = ({to_text(result.ntt_factor)}) dt"
                              if result.ntt_factor is not None else None),
        "branch": result.branch,
        "messages": list(result.messages),
        "trace": ([{"step": i + 1,
                    **_transform_to_dict(s.transform, domain),
                    "restriction": s.restriction}
                   for i, s in enumerate(result.trace.steps)]
                  if result.trace is not None else None),
    }
    return doc


def dump_result(result: DarbouxResult, seed: int) -> str:
    return json.dumps(result_to_dict(result, seed), sort_keys=True, indent=2) + "\n"


def load_result(path: str, J: StructureMatrix) -> DarbouxResult:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format_version")
    domain = J.domain
    n = J.n

    def parse_field(text, what):
        try:
            return parse(text, domain)
        except ExprError as exc:
            raise InputError(f"{path}: cannot parse {what}: {exc}") from exc

    status = doc.get("status")
    if status not in ("jacobian-congruence", "ntt-congruence",
                      "congruence-only", "failed"):
        raise InputError(f"{path}: unknown status {status!r}")
    target = None
    if doc.get("target"):
        target = canonical_matrix(doc["target"]["n"], doc["target"]["r"])
        if target.n != n:
            raise InputError(f"{path}: target dimension does not match the problem")
    K = None
    if doc.get("K") is not None:
        K = tuple(tuple(parse_field(e, "K entry") for e in row) for row in doc["K"])
        if len(K) != n or any(len(row) != n for row in K):
            raise InputError(f"{path}: K must be {n}x{n}")
    y = None
    if doc.get("y") is not None:
        y = tuple(parse_field(e, "y component") for e in doc["y"])
    casimirs = tuple(parse_field(c, "casimir") for c in doc.get("casimirs") or [])
    ntt = None
    if doc.get("ntt_factor") is not None:
        ntt = parse_field(doc["ntt_factor"], "ntt_factor")
    trace = None
    if doc.get("trace") is not None:
        M = J.entries
        steps = []
        for d in doc["trace"]:
            t = _transform_from_dict(d, domain, n)
            M = apply_step(M, t)
            steps.append(TraceStep(t, M, is_jetm(t, domain)[0],
                                   d.get("restriction")))
        trace = ReductionTrace(J.entries, tuple(steps))
    return DarbouxResult(status, J, target, K, trace, y, casimirs,
                         ntt_factor=ntt, branch=doc.get("branch"),
                         messages=tuple(doc.get("messages") or ()))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    J = load_problem(args.problem)
    cfg = SamplerConfig(seed=args.seed)
    skew = check_skew(J, cfg)
    print(f"skew-symmetry: {skew.verdict}"
          + (f" at {skew.location}" if skew.location else ""))
    if skew.verdict == "fail":
        return EXIT_CHECK_FAILED
    jac = check_jacobi(J, cfg)
    print(f"jacobi identities: {jac.verdict}"
          + (f" at triple {jac.location}" if jac.location else ""))
    if jac.verdict == "fail":
        return EXIT_CHECK_FAILED
    r, report = generic_rank(J, cfg)
    print(f"generic rank: {r} "
          + ("(constant on samples)" if report.consistent else "(NOT constant)"))
    return EXIT_OK


def cmd_rank(args) -> int:
    J = load_problem(args.problem)
    cfg = SamplerConfig(seed=args.seed, samples=args.samples)
    r, report = generic_rank(J, cfg)
    print(f"generic rank: {r}")
    print(f"constant across {len(report.ranks)} samples: {report.consistent}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    J = load_problem(args.problem)
    cfg = SamplerConfig(seed=args.seed)
    try:
        result = reduce_functional(
            J, require_jacobian=not args.no_require_jacobian,
            allow_ntt=args.allow_ntt, max_steps=args.max_steps,
            backtrack_budget=args.backtrack, cfg=cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    text = dump_result(result, args.seed)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"status: {result.status}", file=sys.stderr)
    if result.status in ("jacobian-congruence", "ntt-congruence"):
        return EXIT_OK
    if result.status == "congruence-only":
        return EXIT_CONGRUENCE_ONLY
    return EXIT_FAILED


def cmd_verify(args) -> int:
    J = load_problem(args.problem)
    result = load_result(args.result, J)
    if result.status == "failed":
        raise InputError("result file records a failed reduction; nothing to verify")
    cfg = SamplerConfig(seed=args.seed, samples=args.samples,
                        tolerance=args.tolerance)
    report = verify_reduction(J, result, cfg)
    for rec in report.records:
        line = (f"{rec.name}: max residual {rec.max_residual:.3e} over "
                f"{rec.samples} samples -> {'pass' if rec.passed else 'FAIL'}")
        if not rec.passed:
            line += f" (witness point {rec.worst_point})"
        print(line)
    print(f"overall: {'pass' if report.passed else 'FAIL'} "
          f"at tolerance {report.tolerance:g} (seed {report.seed})")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_simulate(args) -> int:
    J = load_problem(args.problem)
    if J.hamiltonian is None:
        raise InputError("problem file has no hamiltonian; simulate needs one")
    try:
        x0 = [float(v) for v in args.x0.split(",")]
    except ValueError as exc:
        raise InputError(f"--x0 must be comma-separated numbers: {exc}") from exc
    params = {}
    if args.params:
        for item in args.params.split(","):
            name, _, value = item.partition("=")
            try:
                params[name.strip()] = float(value)
            except ValueError as exc:
                raise InputError(
                    f"--params entries must look like name=value: {item!r}") from exc
    missing = set(J.domain.parameters) - set(params)
    if missing:
        raise InputError(
            f"numeric values required for parameters {sorted(missing)}; "
            "pass them with --params name=value[,name=value...]")
    casimirs = load_known_casimirs(args.problem, J)
    try:
        tr = simulate(J, J.hamiltonian, x0, args.t_end, args.dt,
                      casimirs=casimirs, params=params)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *J.domain.variables,
                             "H", *[f"C{i + 1}" for i in range(len(casimirs))]])
            for k, t in enumerate(tr.times):
                writer.writerow([repr(t), *[repr(v) for v in tr.states[k]],
                                 repr(tr.hamiltonian_values[k]),
                                 *[repr(series[k]) for series in tr.casimir_values]])
    rep = conservation_report(tr)
    print(f"steps: {len(tr.times) - 1}  (dt = {tr.step:g})")
    if tr.truncated:
        print(f"trajectory truncated: {tr.truncation_reason}")
    print(f"hamiltonian drift: {rep.hamiltonian_drift:.3e}")
    for i, d in enumerate(rep.casimir_drifts):
        print(f"casimir C{i + 1} drift: {d:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darboux",
        description="Reduce Poisson structure matrices to Darboux canonical "
                    "form by elementary congruence transformations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="skew-symmetry, Jacobi PDEs, and rank")
    p.add_argument("problem")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("rank", help="sampled generic rank")
    p.add_argument("problem")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("reduce", help="search for a Darboux reduction")
    p.add_argument("problem")
    p.add_argument("-o", "--output", help="write the result JSON here")
    p.add_argument("--require-jacobian", dest="no_require_jacobian",
                   action="store_false", default=False,
                   help="only accept steps realizable as diffeomorphisms "
                        "(this is the default)")
    p.add_argument("--no-require-jacobian", dest="no_require_jacobian",
                   action="store_true",
                   help="skip the Jacobian-only search and accept any congruence")
    p.add_argument("--allow-ntt", action="store_true",
                   help="also try factoring out a time reparametrization")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--backtrack", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("verify", help="numerically re-check a reduction result")
    p.add_argument("problem")
    p.add_argument("result")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="integrate the Poisson dynamics")
    p.add_argument("problem")
    p.add_argument("--x0", required=True,
                   help="comma-separated initial state, e.g. 1,1,1")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--params", default=None,
                   help="numeric parameter values, e.g. b=0.5,c=2")
    p.add_argument("-o", "--output", help="write the trajectory CSV here")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
