"""How the scaling matrix filters the step, seen through the GSVD.

For a pair (J, L) the generalized SVD writes the LM step as
d = -X Gamma U^T F with Gamma_ii = sigma_i / (sigma_i^2 + lam mu_i^2).
Each filter entry equals psi(gamma_i, lam) with gamma_i = sigma_i / mu_i,
and psi has a closed-form supremum, which yields a bound on ||d||.
"""

import numpy as np

from lmmss import first_diff
from lmmss.gsvd import gamma_filter, gen_singular_values, gsvd_pair, psi_max, step_norm_bound
from lmmss.scaling import completeness_gamma
from lmmss.solver import damping, lm_step

rng = np.random.default_rng(0)
J = rng.standard_normal((8, 5))
J[:, 4] = J[:, 0]                        # a rank-deficient Jacobian
L = first_diff(5)
F = rng.standard_normal(8)
lam = damping(F)

f = gsvd_pair(J, np.asarray(L))
print("generalized singular values:", np.array2string(gen_singular_values(f), precision=4))
print("filter diagonal:           ", np.array2string(np.diag(gamma_filter(f, lam)), precision=4))
print(f"lambda = {lam:.3f}, sup psi = {psi_max(lam).value:.4f}")

d = lm_step(J, F, L, lam)
bound = step_norm_bound(f, lam, F, completeness_gamma(J, L))
print(f"||d|| = {np.linalg.norm(d):.4f} <= bound {bound:.4f}")
