"""
SAC against oracle value expansion on the pendulum
==================================================

Train plain SAC (horizon 0) and OVE with horizon 3, where critic targets are
built from short rollouts of the true dynamics. Each run stops as soon as an
evaluation reaches the top threshold, so the printout is a direct
steps-to-threshold comparison. Takes a couple of minutes on one core.
"""

# %%
import logging

from mbve import TrainConfig, train_run
from mbve.metrics import env_thresholds, steps_to_threshold

logging.basicConfig(level=logging.INFO, format="%(message)s")
top = env_thresholds("pendulum")[-1]

# %%
results = {}
for algo, horizon in (("sac", 0), ("ove", 3)):
    cfg = TrainConfig(env="pendulum", algo=algo, horizon=horizon, total_steps=15_000, stop_reward=top)
    results[cfg.label] = train_run(cfg, seed=0)

# %%
for label, run in results.items():
    (_, step), = steps_to_threshold(run, [top])
    print(f"{label}: reached {top:g} at step {step}; curve {run.curve()}")
