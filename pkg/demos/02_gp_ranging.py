"""
Ranging with a Gaussian process
===============================

Train a GP range model on one preset, compare it with the KNN baseline and with
models from other presets, and sweep the kernel family.
"""

# %%
import numpy as np

from rfidgp import gp_engine, signal_sim
from rfidgp.gp_engine import KernelConfig
from rfidgp.ranging import error_metrics, knn_ranges

# %%
spec = signal_sim.load_preset("env_d")
train, test = signal_sim.split_dataset(signal_sim.generate_dataset(spec), 0.8, seed=0)
model = gp_engine.train(train)
print(f"trained on {model.n_train} of {len(train)} samples; "
      f"mean line d = {model.mean.slope:.2f} * dphi {model.mean.intercept:+.2f}")

# %%
# GP against KNN(k=5) on held-out samples.
gp = error_metrics(model.predict_mean(test.delta_phi), test.true_distance)
knn = error_metrics(knn_ranges(train.delta_phi, train.true_distance, test.delta_phi, 5),
                    test.true_distance)
print(f"GP  mean {gp.mean:.3f} m  p90 {gp.p90:.3f} m")
print(f"KNN mean {knn.mean:.3f} m  p90 {knn.p90:.3f} m")

# %%
# Predictive uncertainty widens away from the training inputs.
for x in (0.5, 0.9, 1.6):
    mu, var = model.predict_mean([x])[0], model.predict_var([x])[0]
    print(f"dphi {x:.1f} rad -> {mu:6.2f} m +/- {np.sqrt(var + model.kernel.noise_variance):.2f}")

# %%
# Kernel sweep: correct-environment RMSE against a model from another site.
other_train, _ = signal_sim.split_dataset(signal_sim.generate_dataset(signal_sim.load_preset("env_f")), 0.8)
for kind in gp_engine.KERNELS:
    right = gp_engine.train(train, KernelConfig(kind))
    wrong = gp_engine.train(other_train, KernelConfig(kind))
    r = error_metrics(right.predict_mean(test.delta_phi), test.true_distance).rmse
    w = error_metrics(wrong.predict_mean(test.delta_phi), test.true_distance).rmse
    print(f"{kind:9s} correct {r:.4f} m  incorrect {w:.4f} m")
