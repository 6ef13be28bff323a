"""JSON-lines trajectory logs (one record per step, plus the reset record at t=0)."""
from __future__ import annotations

import json

import numpy as np


def _pose_rows(state) -> list[list[float]]:
    return [[float(f"{x:.9g}") for x in p.as_array()] for p in state.poses]


def step_record(episode: int, t: int, action, reward: float, done: bool, failure, state) -> dict:
    return {
        "episode": int(episode),
        "t": int(t),
        "action": [int(a) for a in action],
        "reward": float(reward),
        "done": bool(done),
        "failure": None if failure is None else str(getattr(failure, "value", failure)),
        "poses": _pose_rows(state),
    }


class TrajectoryLog:
    """Append-only writer; use as a context manager."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def reset(self, episode: int, state, chair_id: int | None = None) -> None:
        rec = step_record(episode, 0, [], 0.0, False, None, state)
        if chair_id is not None:
            rec["chair_id"] = int(chair_id)
        self._write(rec)

    def step(self, episode: int, t: int, action, result) -> None:
        self._write(step_record(episode, t, action, result.reward, result.done,
                                result.failure, result.next_state))

    def _write(self, rec: dict) -> None:
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def poses_array(record: dict) -> np.ndarray:
    return np.asarray(record["poses"], float)
