"""Facility location: robust and worst-case-expectation plans side by side."""
# %%
from unionro.bench.cases import location_case
from unionro.bench.experiments import run_case
from unionro.bench.io import case_file

pf = case_file(location_case())
for rec in run_case(pf):
    print(f"{rec.scheme:16s} {rec.objective:12.4f}  open {rec.x[:3].round().astype(int)}  "
          f"cap {rec.x[3:].round(1)}  {rec.iterations} iterations")

# %%
# With one subset the ball collapses to a point and both plans coincide.
for rec in run_case(case_file(location_case(K=1))):
    print(f"K=1 {rec.scheme:16s} {rec.objective:12.4f}")
