"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream_id)``, so a trajectory's draws depend only on its own key and
never on how work was scheduled across workers.
"""
import numpy as np

# Stream ids reserved for package-level draws; per-trajectory streams start at
# TRAJECTORY_STREAM_BASE and are offset by the trajectory index.
TANGENT_STREAM = 0
X0_STREAM = 1
ADJOINT_STREAM = 2
TRAJECTORY_STREAM_BASE = 1 << 20


def stream_generator(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return a Generator whose state is a pure function of (seed, stream_id)"""
    if seed < 0 or stream_id < 0:
        raise ValueError(f"seed and stream_id must be non-negative, got {seed}, {stream_id}")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
