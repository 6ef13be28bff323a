"""Fixed-length, zero-padded state vectors for the Q networks."""
from __future__ import annotations

import numpy as np

from partforge.errors import CapExceeded
from partforge.learn.autoencoder import encode_part

FEATURE_DIM = 128
GRASP_DIM = 12
POSE_DIM = 6
SLOT_DIM = FEATURE_DIM + GRASP_DIM + POSE_DIM
PAPER_CAPS = (20, 10, 6)


def encoding_length(max_parts: int, feature_dim: int = FEATURE_DIM) -> int:
    return max_parts * (feature_dim + GRASP_DIM + POSE_DIM) + max_parts * max_parts * POSE_DIM


def grasp_summary(part) -> np.ndarray:
    """Centre and first approach direction of each of the two grasp regions (part frame)."""
    out = np.zeros(GRASP_DIM)
    for i, region in enumerate(part.grasp_regions[:2]):
        out[6 * i:6 * i + 3] = region.center
        out[6 * i + 3:6 * i + 6] = region.approach_dirs[0]
    return out


def _check_caps(chair, max_parts, max_connections):
    if chair.n_parts > max_parts:
        raise CapExceeded(f"chair {chair.id} has {chair.n_parts} parts, cap is {max_parts}")
    if max_connections is not None and max(len(p.connections) for p in chair.parts) > max_connections:
        raise CapExceeded(f"chair {chair.id} has a part with more than {max_connections} connections")


def part_features(ae, state) -> np.ndarray:
    """Autoencoder features of every part, taken at the state's poses (call on the reset state)."""
    return np.stack([encode_part(ae, p, pose) for p, pose in zip(state.chair.parts, state.poses)])


def build_state_encoding(state, features, max_parts: int = 8, max_connections: int | None = None) -> np.ndarray:
    """Slot ``x``: ``[feature | grasp summary | pose]``, followed by the padded connection tensor.

    Parameters
    ----------
    state : AssemblyState
    features : array, shape (n_parts, feature_dim)
        Per-part geometry features (fixed for the episode).
    max_parts, max_connections : padding caps.
    """
    chair = state.chair
    _check_caps(chair, max_parts, max_connections)
    features = np.asarray(features, np.float32)
    M, F = features.shape
    slot = F + GRASP_DIM + POSE_DIM
    out = np.zeros(encoding_length(max_parts, F), np.float32)
    slots = out[:max_parts * slot].reshape(max_parts, slot)
    slots[:M, :F] = features
    slots[:M, F:F + GRASP_DIM] = [grasp_summary(p) for p in chair.parts]
    slots[:M, F + GRASP_DIM:] = [p.as_array() for p in state.poses]
    tensor = out[max_parts * slot:].reshape(max_parts, max_parts, POSE_DIM)
    tensor[:M, :M] = state.tensor
    return out
