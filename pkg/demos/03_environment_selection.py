"""
Choosing an environment model
=============================

A dictionary holds one GP per surveyed site.  For an unlabeled stream, each
model is scored by its log likelihood weighted by the distance between the
stream's segmentation vector and the model's; the highest score wins.
"""

# %%
import numpy as np

from rfidgp import gp_engine, signal_sim
from rfidgp.env_dictionary import ModelDictionary, select_model

# %%
names = ["env_a", "env_b", "env_c", "env_d", "env_e", "env_f"]
splits = {n: signal_sim.split_dataset(signal_sim.generate_dataset(signal_sim.load_preset(n)), 0.8)
          for n in names}
dictionary = ModelDictionary([gp_engine.train(splits[n][0], env_id=n) for n in names])
for m in dictionary.models:
    print(f"{m.env_id}: v_l = ({m.v_l.v1:.1f}, {m.v_l.v2:.1f}, {m.v_l.v3:.1f})")

# %%
# One sparse sample of 100 readings from env_c's held-out data.
test = splits["env_c"][1]
rng = np.random.default_rng(1)
report = select_model(dictionary, test.delta_phi[rng.choice(len(test), 100, replace=False)])
for env, w, lik, s in zip(report.env_ids, report.weights, report.likelihoods, report.weighted_scores):
    print(f"{env}: w = {w:7.3f}  L = {lik:8.2f}  w*L = {s:10.2f}")
print("chosen:", report.chosen_env_id)

# %%
# Repeat over 20 random subsets of every site.
for n in names:
    test = splits[n][1]
    picks = [select_model(dictionary, test.delta_phi[rng.choice(len(test), 100, replace=False)]).chosen_env_id
             for _ in range(20)]
    print(f"{n}: correct {picks.count(n)}/20, most common {max(set(picks), key=picks.count)}")
