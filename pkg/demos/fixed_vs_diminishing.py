"""Fixed stepsizes stall at a noise floor; diminishing stepsizes keep going.

SG on a noisy 10-d identity quadratic.  With a fixed stepsize the mean gap
settles at a floor below alpha L M / (2 c mu), and halving alpha halves it.  With
alpha_k = beta/(gamma+k) the gap keeps shrinking like 1/k.
"""

import numpy as np

from stochopt import Diminishing, Fixed
from stochopt.harness import sg_gap_curve
from stochopt.problems import identity_quadratic

problem = identity_quadratic(10, noise=1.0)
w1 = np.ones(problem.d)
record = [10, 100, 1000, 10_000]
seeds = range(1, 11)


def mean_gaps(schedule):
    runs = [[sg_gap_curve(problem, schedule, w1, s, record[-1], record)[0][k] for k in record]
            for s in seeds]
    return np.mean(runs, axis=0)


print(f"{'k':>8} {'alpha=0.5':>12} {'alpha=0.25':>12} {'2/(1+k)':>12}")
rows = zip(record, mean_gaps(Fixed(0.5)), mean_gaps(Fixed(0.25)), mean_gaps(Diminishing(2.0, 1.0)))
for k, a, b, c in rows:
    print(f"{k:>8} {a:>12.4g} {b:>12.4g} {c:>12.4g}")
print("upper bounds on the floors: 0.25 and 0.125 (alpha L M / 2 c mu)")
