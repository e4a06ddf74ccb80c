import sys
sys.path.insert(0, "src")
from darboux.expr import Domain, parse, to_text, simplify
from darboux.poisson import StructureMatrix, congruence_transform
from darboux import congruence as cg


def show(name, res):
    print(f"== {name}: status={res.status}")
    if res.K is not None:
        print("  K:")
        for row in res.K:
            print("    [" + ", ".join(to_text(e) for e in row) + "]")
    if res.y is not None:
        print("  y:", [to_text(e) for e in res.y])
    print("  casimirs:", [to_text(c) for c in res.casimirs])
    if res.ntt_factor is not None:
        print("  g:", to_text(res.ntt_factor),
              "| g(y):", to_text(res.ntt_factor_in_casimirs) if res.ntt_factor_in_casimirs is not None else None)
    if res.target:
        print("  target: S(%d,%d)" % (res.target.n, res.target.r), "symbolic:", res.symbolic_identity)
    print("  branch:", res.branch)
    print("  messages:", res.messages)
    print("  steps:", len(res.trace.steps) if res.trace else 0)


def build(rows, variables, signs, parameters=None):
    dom = Domain.make(variables, dict(zip(variables, signs)), parameters)
    grid = [[parse(s, dom) for s in row] for row in rows]
    return StructureMatrix.from_rows(grid, dom)


# Kermack-McKendrick
km = build(
    [["0", "b*x1*x2", "-1*b*x1*x2"],
     ["-1*b*x1*x2", "0", "b*x1*x2"],
     ["b*x1*x2", "-1*b*x1*x2", "0"]],
    ("x1", "x2", "x3"), ("positive", "positive", "positive"), {"b": "positive"})
show("kermack", cg.reduce_functional(km))

# Toda N=3: vars (x1..x5) = (a1,a2,b1,b2,b3)
toda = build(
    [["0", "0", "-1*x1", "x1", "0"],
     ["0", "0", "0", "-1*x2", "x2"],
     ["x1", "0", "0", "0", "0"],
     ["-1*x1", "x2", "0", "0", "0"],
     ["0", "-1*x2", "0", "0", "0"]],
    ("x1", "x2", "x3", "x4", "x5"),
    ("positive", "positive", "unrestricted", "unrestricted", "unrestricted"))
show("toda3", cg.reduce_functional(toda))

# so(3)
so3 = build(
    [["0", "-1*x3", "x2"],
     ["x3", "0", "-1*x1"],
     ["-1*x2", "x1", "0"]],
    ("x1", "x2", "x3"), ("positive", "positive", "positive"))
show("so3 ntt", cg.reduce_functional(so3, allow_ntt=True))
show("so3 congruence-only", cg.reduce_functional(so3, allow_ntt=False))

# D_psi 4x4 with psi = exp(C3 + C4) = exp(x1 + 2*x2 + x3 + x4)
psi = "exp(x1 + 2*x2 + x3 + x4)"
A = [[0, 1, -1, -1], [-1, 0, 0, 1], [1, 0, 0, -1], [1, -1, 1, 0]]
rows = [[("%d*%s" % (A[i][j], psi)) if A[i][j] else "0" for j in range(4)] for i in range(4)]
dpsi = build(rows, ("x1", "x2", "x3", "x4"), ("unrestricted", "unrestricted", "unrestricted", "unrestricted"))
show("dpsi", cg.reduce_functional(dpsi, allow_ntt=True))

# constant reduction sanity
tr = cg.reduce_constant([[0, 2, 1], [-2, 0, 0], [-1, 0, 0]])
print("const final:", [[to_text(e) for e in row] for row in tr.final], "r =", cg.constant_rank(tr))
print("replay == final:", tr.replay() == tr.final)
