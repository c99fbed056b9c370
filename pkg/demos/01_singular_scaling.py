"""Levenberg-Marquardt with a singular scaling matrix on a toy problem.

F(x) = (x1, x1 x2) vanishes on the whole line x1 = 0, so the solution set
is not isolated.  The damping term uses L = [-1, 1]; L^T L is singular, but
its null space (constant vectors) never meets the null space of the
Jacobian, so every step is well defined.  Watch the distance to the
solution set square itself from one iteration to the next.
"""

import numpy as np

from lmmss import SolverConfig, identity, solve
from lmmss.problems import product_problem

case = product_problem((0.5, 0.3))

for label, L in (("L = first difference", case.L), ("L = identity", identity(2))):
    x, trace = solve(case.problem, L, case.x0, SolverConfig(eps=1e-14))
    print(f"\n{label}: stopped with {trace.stop_reason.value} after {trace.iterations} steps")
    print(f"{'k':>3} {'||F||':>12} {'lambda':>12} {'dist':>12}")
    for r in trace.records:
        print(f"{r.k:>3} {r.resid_norm:12.3e} {r.lam:12.3e} {r.dist:12.3e}")
    print("final x =", np.array2string(x, precision=6))
