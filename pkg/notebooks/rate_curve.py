# coding: utf-8

# # Risk against noise level
#
# One boundary atom with beta = 2 on a single coordinate. In the bias-dominated
# regime the risk should scale like eps^{4 beta / (2 beta + 1)} = eps^1.6.

# In[1]:

import numpy as np

from compound_minimax import CandidateSpace, SobolevBall, compose, make_structure
from compound_minimax.compound import power_law_atom
from compound_minimax.risk import AggregateEstimator, benchmark, rate_exponent, rate_fit


# In[2]:

beta, L, cutoff = 2.0, 1000.0, 60
atom = power_law_atom(SobolevBall(3, (1,), beta, L), cutoff, decay=beta + 0.5)
f = compose(0.0, make_structure(3, 1, [(1,)]), [atom], (beta, L))
grid = [0.3, 0.2, 0.15, 0.1, 0.07]


# 50 replicates keeps this quick; the acceptance suite uses 200.

# In[3]:

reports = benchmark(f, AggregateEstimator(CandidateSpace(3, 1, cutoff, m_max=1)), grid, 50, 3,
                    lambda e: cutoff, beta, L, 1, 1, max_support=1, threads=4)
for r in reports:
    print(f"eps={r.epsilon:<5} MISE={r.mean_mise:.4f} +- {r.stderr:.4f}  {r.active_branch}")


# In[4]:

fit = rate_fit(reports, rate_exponent(beta, 1))
print(f"slope {fit.slope:.3f}, target {fit.target_exponent}, r^2 {fit.r_squared:.4f}")
print(np.column_stack([np.log(grid), np.log([r.mean_mise for r in reports])]))
