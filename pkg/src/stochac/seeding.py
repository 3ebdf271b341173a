"""Per-trajectory random streams.

Every trajectory owns independent generators derived from
``(master_seed, trajectory_index, stream_tag)``, so results never depend on
how trajectories are batched or scheduled.
"""
import numpy as np

# Published stream tags; changing them changes every simulated path.
SUBORDINATOR_STREAM = 0x5B0D
GAUSSIAN_STREAM = 0x6A55
AUXILIARY_STREAM = 0xA0C5


def trajectory_rng(master_seed, index, tag):
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index), int(tag)])
    return np.random.Generator(np.random.PCG64(ss))
