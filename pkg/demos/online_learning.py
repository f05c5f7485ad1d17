"""Online PSHMM with and without forgetting on a chain whose transitions change midway.

Run with ``python3 demos/online_learning.py``.  After a 500-step warm-up the
model updates its moments one observation at a time.  A forgetting factor
lets it track the switch from a sticky to a non-sticky chain.
"""
import numpy as np

from pshmm.evalkit import r_squared
from pshmm.model_sim import make_spec, sample_trajectory
from pshmm.projection import iter_online_pshmm

sticky = make_spec(S=3, p=10, sigma=0.1, p_stay=0.9)
loose = make_spec(S=3, p=10, sigma=0.1, p_stay=0.2)
X = np.vstack([sample_trajectory(sticky, 2000, seed=3).observations,
               sample_trajectory(loose, 2000, seed=4).observations])
WARMUP = 500

for gamma in (0.0, 0.01):
    steps = list(iter_online_pshmm(X, WARMUP, d=3, gamma=gamma, seed=0))
    pred = np.array([s.x_hat for s in steps[:-1]])
    actual = X[WARMUP:]
    late = slice(2000 - WARMUP + 500, None)   # well after the switch
    print(f"gamma = {gamma}: R2 overall {r_squared(pred, actual):+.4f}, "
          f"after the switch {r_squared(pred[late], actual[late]):+.4f}, "
          f"held beliefs {sum(s.flag for s in steps)}")
