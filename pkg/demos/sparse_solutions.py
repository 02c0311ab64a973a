"""Three routes to the same sparse LASSO solution.

ISTA takes cheap proximal gradient steps.  Proximal Newton minimizes a
quadratic model of the smooth part plus the l1 term by coordinate descent.
The orthant method fixes a sign pattern and takes Newton-like steps on the
free variables.  All three land on the same objective and the same zeros.
"""

import numpy as np

from stochopt.harness import default_lasso, solve_ista, solve_orthant, solve_prox_newton
from stochopt.problems import CompositeL1Problem
from stochopt.regularized import format_sparse

smooth = default_lasso().smooth   # least squares, n=50, d=20, five nonzero true coefficients
for lam1 in (0.01, 0.1, 1.0):
    problem = CompositeL1Problem(smooth, lam1)
    sols = {"ista": solve_ista(problem), "prox-newton": solve_prox_newton(problem),
            "orthant": solve_orthant(problem)}
    print(f"lambda = {lam1}")
    for name, w in sols.items():
        print(f"  {name:<12} phi = {problem.value(w):.12f}  nonzeros = {np.count_nonzero(w)}")
    print("  solution:", format_sparse(sols["ista"], precision=4))
