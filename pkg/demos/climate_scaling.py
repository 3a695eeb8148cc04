"""Building heating schedule: runtime of the encoded and explicit schemes over horizons."""
# %%
from unionro.bench.experiments import runtime_scaling

for row in runtime_scaling(seed=0, K=2, N_list=(2, 3, 4)):
    print(row["N"], row["algo1_time"], row["baseline_time"], row["algo1_obj"], row["baseline_obj"])
