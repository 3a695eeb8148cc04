"""Worst-case expectation over a KL ball as the radius grows."""
# %%
import numpy as np

from unionro.ccg_dro import AmbiguitySet, worst_case_expectation_dual, worst_case_expectation_primal

C = np.array([3.0, 1.0, 7.0, 2.0])
p_bar = np.array([0.4, 0.3, 0.1, 0.2])
print("nominal", p_bar @ C, "worst subset", C.max())

# %%
# The two-variable dual and the direct maximisation over p agree.
for rho in (0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 50.0):
    amb = AmbiguitySet(p_bar, rho)
    d = worst_case_expectation_dual(C, amb)
    p = worst_case_expectation_primal(C, amb)
    print(f"rho {rho:5}: dual {d.value:.6f}  primal {p.value:.6f}  p* {np.round(p.p, 3)}")
