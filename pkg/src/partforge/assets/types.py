from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from partforge.geom import Pose6D, TriMesh

MAX_PARTS = 20
MAX_CONNECTIONS = 10


@dataclass(frozen=True)
class ConnectionPoint:
    """Mating location on a part, in the part's COM frame."""

    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    tangent: tuple[float, float, float]
    mate_part: int
    mate_connection: int

    def as_vector(self) -> np.ndarray:
        """The 9-number descriptor: position, normal, tangent."""
        return np.array([*self.position, *self.normal, *self.tangent])


@dataclass(frozen=True)
class GraspRegion:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    approach_dirs: tuple[tuple[float, float, float], ...]


@dataclass(frozen=True, eq=False)
class Part:
    id: int
    mesh: TriMesh
    connections: tuple[ConnectionPoint, ...] = ()
    grasp_regions: tuple[GraspRegion, ...] = ()
    equivalence_class: int = -1

    @property
    def n_connections(self) -> int:
        return len(self.connections)


@dataclass(frozen=True, eq=False)
class ChairAsset:
    """A chair: parts in COM-local frames plus their assembled poses.

    ``gt_adjacency`` holds mated connection pairs ``(a, ka, b, kb)`` with
    ``a < b``. ``assembly_order`` is a known-good sequence of
    ``(u, v, k, l, w)`` actions for the object-centric setting.
    """

    id: int
    parts: tuple[Part, ...]
    gt_poses: tuple[Pose6D, ...]
    gt_adjacency: frozenset = frozenset()
    difficulty: str = "easy"
    layout: str = ""
    assembly_order: tuple[tuple[int, int, int, int, int], ...] = ()
    intended_pairs: frozenset = field(default=frozenset(), repr=False)

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def adjacent_part_pairs(self) -> set[tuple[int, int]]:
        return {(a, b) for a, _, b, _ in self.gt_adjacency}

    def equivalence_classes(self) -> list[list[int]]:
        classes: dict[int, list[int]] = {}
        for p in self.parts:
            classes.setdefault(p.equivalence_class, []).append(p.id)
        return sorted(classes.values())


@dataclass(frozen=True)
class DatasetManifest:
    easy_train: tuple[int, ...]
    hard_train: tuple[int, ...]
    test: tuple[int, ...]
    config: dict = field(default_factory=dict, compare=False)

    @property
    def n_train(self) -> int:
        return len(self.easy_train) + len(self.hard_train)

    @property
    def n_test(self) -> int:
        return len(self.test)

    def split(self, name: str) -> tuple[int, ...]:
        if name not in ("easy_train", "hard_train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_ids(self) -> list[int]:
        return sorted(self.easy_train + self.hard_train + self.test)
