"""
Value expansion by hand
=======================

The expanded value of a start state is the discounted soft reward collected
along a short rollout, plus a discounted soft Q-value at the step where the
rollout stops. This script builds two tiny rollouts and checks the numbers
against arithmetic you can do by hand.
"""

# %%
import numpy as np

from mbve.expansion import RolloutBatch, expand_value, target_decomposition


def constant_q(value):
    return lambda s, a: np.full(s.shape[0], value)


# %%
# Two rewards of 1 and 2, a bootstrap of 10, gamma 0.9 and no entropy bonus:
# 1 + 0.9 * 2 + 0.81 * 10 = 10.9.
two_step = RolloutBatch(
    states=np.zeros((1, 3, 1)),
    actions=np.zeros((1, 3, 1)),
    rewards=np.array([[1.0, 2.0]]),
    log_probs=np.zeros((1, 3)),
    masks=np.ones((1, 2)),
)
print("two-step value:", expand_value(two_step, constant_q(10.0), alpha=0.0, gamma=0.9, horizon=2))

# %%
# With alpha = 1 the log-probabilities enter as an entropy bonus:
# (0 + 1) + 0.5 * (4 + 2) = 4.
one_step = RolloutBatch(np.zeros((1, 2, 1)), np.zeros((1, 2, 1)), np.array([[0.0]]),
                        np.array([[-1.0, -2.0]]), np.ones((1, 1)))
print("one-step value:", expand_value(one_step, constant_q(4.0), alpha=1.0, gamma=0.5, horizon=1))

# %%
# The per-term breakdown shows where the value comes from.
print("terms (step 0, step 1, bootstrap):", target_decomposition(two_step, constant_q(10.0), 0.0, 0.9, 2)[0])
