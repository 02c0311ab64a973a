"""SG versus SVRG and SAGA on regularized logistic regression.

Plain SG with a fixed stepsize stalls at a noise floor.  SVRG and SAGA
correct each stochastic gradient with stored information.  Their directions
stay unbiased while the variance vanishes at the solution, so both converge
linearly at a per-sample cost.
"""

import numpy as np

from stochopt import Fixed
from stochopt.harness import default_logistic
from stochopt.noise_reduction import (AggregatedState, SVRGState, saga_step, saga_stepsize,
                                      svrg_outer)
from stochopt.sg_family import SGState, sg_step

problem = default_logistic()          # n=1000, d=50, lambda=1e-2
_, f_star = problem.reference()
n, epochs = problem.n, 30
w1 = np.zeros(problem.d)
Li = problem.L_component

sg = SGState.start(w1, seed=1)
saga = AggregatedState.start(problem, w1, seed=1)
svrg = SVRGState.start(w1, seed=1)
a_sg, a_saga, a_svrg, m = 0.1 / Li, saga_stepsize(Li), 0.1 / Li, 2 * n

print(f"{'epoch':>6} {'SG':>12} {'SAGA':>12} {'SVRG':>12}   (F(w) - F_*)")
for e in range(1, epochs + 1):
    while sg.adp < e * n:
        sg_step(sg, problem, Fixed(a_sg))
    while saga.adp < e * n:
        saga_step(saga, problem, a_saga)
    while svrg.adp < e * n:             # one outer iteration costs n + 2m
        svrg_outer(svrg, problem, a_svrg, m)
    if e % 5 == 0:
        gaps = [problem.value(s.w) - f_star for s in (sg, saga, svrg)]
        print(f"{e:>6} " + " ".join(f"{g:>12.3e}" for g in gaps))
