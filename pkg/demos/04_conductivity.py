"""Identifying an orthotropic conductivity from full-field temperatures.

Both diagonal components k11 and k22 are unknown at every grid node.  The
block operator applies the same smoothing to each component separately.
A reduced grid keeps the run short; see configs/conductivity.json for the
full benchmark.
"""

from lmmss.experiments import run_conductivity_campaign

report = run_conductivity_campaign(dict(example="orthotropic", n=8, n_obs=5,
                                        noise_levels=[0.0, 1e-2], operators=["I", "L1"],
                                        seeds=[0, 1]))
print(report.format_table())
