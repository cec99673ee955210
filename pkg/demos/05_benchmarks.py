"""
Running the experiment suite
============================

The bench module restates the evaluation as seeded simulator studies.  Each
experiment returns per-seed metrics and pass/fail checks against the bounds in
``bench_thresholds.cfg``, and can write ``result.json`` plus ``summary.txt``.
The same runs are available as ``rfidgp bench --out DIR``.
"""

# %%
import tempfile

from rfidgp import bench

# %%
results = bench.run_all(seeds=(0,), names=["model_choice", "kinematic", "kernel_sweep", "throughput"])
for res in results.values():
    print(res.summary())

# %%
# Results can be written as one directory per experiment.
with tempfile.TemporaryDirectory() as out:
    path = results["kernel_sweep"].write(out)
    print(sorted(p.name for p in path.iterdir()))
