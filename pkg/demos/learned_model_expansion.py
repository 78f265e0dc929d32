"""
Value expansion through a learned ensemble
==========================================

MVE replaces the true dynamics with a five-member probabilistic ensemble that
is refit on the replay buffer every few hundred steps. Here we watch two
things during one pendulum run: the evaluation reward and the ensemble's
holdout negative log-likelihood, which should fall as data accumulates.
"""

# %%
import numpy as np

from mbve import TrainConfig, train_run
from mbve.metrics import env_thresholds

mid = env_thresholds("pendulum")[2]
cfg = TrainConfig(env="pendulum", algo="mve", horizon=3, total_steps=10_000, stop_reward=mid)
run = train_run(cfg, seed=0)

# %%
print("eval curve:", [(s, round(r, 1)) for s, r in run.curve()])

# %%
# One line per refit: env step and mean holdout NLL across members.
for step, nll in run.model_nll:
    print(f"{step:6d}  {np.mean(nll):8.3f}")
