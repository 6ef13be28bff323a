"""Flat-index wrapper around the step functions, as used by the learners."""
from __future__ import annotations

import dataclasses

from partforge.assets.types import ChairAsset
from partforge.env.core import (
    N_GRASPS,
    ActionFull,
    ActionOC,
    action_space_size,
    decode_action,
    encode_action,
    reset,
    step_full_abstract,
    step_oc,
    valid_action_mask,
)
from partforge.errors import CapExceeded
from partforge.planner import RRTParams

DESK_CAPS = (8, 6, 6)


class AssemblyEnv:
    """One chair, one mode (``"oc"`` or ``"full"``) and padded action caps.

    In full mode the last action axis enumerates grasp pairs
    ``g_a * 8 + g_b`` and its cap is forced to 64.
    """

    def __init__(self, chair: ChairAsset, *, mode: str = "oc", caps=DESK_CAPS,
                 planner: RRTParams | None = None):
        if mode not in ("oc", "full"):
            raise ValueError(f"mode must be 'oc' or 'full', got {mode!r}")
        P, K, W = caps
        if mode == "full":
            W = N_GRASPS * N_GRASPS
        if chair.n_parts > P or max(len(p.connections) for p in chair.parts) > K:
            raise CapExceeded(f"chair {chair.id} exceeds caps P={P}, K={K}")
        self.chair = chair
        self.mode = mode
        self.caps = (P, K, W)
        self.planner = planner or RRTParams(max_states=5_000)

    @property
    def n_actions(self) -> int:
        return action_space_size(self.caps)

    def reset(self, seed: int):
        return reset(self.chair, seed)

    def mask(self, state):
        return valid_action_mask(state, self.caps)

    def decode(self, index: int):
        u, v, k, l, w = decode_action(index, self.caps)
        if self.mode == "oc":
            return ActionOC(u, v, k, l, w)
        return ActionFull(u, v, k, l, w // N_GRASPS, w % N_GRASPS)

    def encode(self, action) -> int:
        last = action.w if isinstance(action, ActionOC) else action.g_a * N_GRASPS + action.g_b
        return encode_action(action.u, action.v, action.k, action.l, last, self.caps)

    def step(self, state, index: int, seed: int = 0):
        params = dataclasses.replace(self.planner, seed=self.planner.seed + seed)
        action = self.decode(index)
        if self.mode == "oc":
            return step_oc(state, action, params)
        return step_full_abstract(state, action, params)

    def expert_indices(self) -> list[int]:
        """Ground-truth assembly order as flat object-centric indices."""
        return [encode_action(u, v, k, l, w, self.caps) for u, v, k, l, w in self.chair.assembly_order]
