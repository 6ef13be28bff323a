"""Assembly state: poses, rigid groups and the connection status tensor."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from partforge.assets.types import ChairAsset
from partforge.geom import Pose6D
from partforge.geom.pose import compose, invert, relative


class UnionFind:
    """Disjoint sets over part ids with path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def copy(self) -> UnionFind:
        uf = UnionFind(0)
        uf.parent = list(self.parent)
        return uf

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo
        return min(ra, rb)

    def members(self, x: int) -> list[int]:
        r = self.find(x)
        return [i for i in range(len(self.parent)) if self.find(i) == r]

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return sorted(out.values())

    def n_groups(self) -> int:
        return sum(1 for i in range(len(self.parent)) if self.find(i) == i)


@dataclass
class AssemblyState:
    """One owner, copied on every step.

    ``roles[x]`` is the ground-truth slot that part ``x`` currently plays;
    it differs from ``x`` only after a symmetric substitution. ``used`` holds
    ``(part, connection)`` slots already consumed by a mating.
    """

    chair: ChairAsset
    poses: list
    tensor: np.ndarray
    groups: UnionFind
    roles: list
    used: frozenset = frozenset()
    step_count: int = 0

    @classmethod
    def initial(cls, chair: ChairAsset, poses) -> AssemblyState:
        M = chair.n_parts
        return cls(chair, list(poses), np.zeros((M, M, 6)), UnionFind(M), list(range(M)))

    def copy(self) -> AssemblyState:
        return dataclasses.replace(self, poses=list(self.poses), tensor=self.tensor.copy(),
                                   groups=self.groups.copy(), roles=list(self.roles))

    @property
    def n_parts(self) -> int:
        return self.chair.n_parts

    def holder(self, role: int) -> int:
        """Part currently playing ground-truth slot ``role``."""
        return self.roles.index(role)

    def group_of(self, x: int) -> list[int]:
        return self.groups.members(x)

    def group_transform(self, x: int) -> Pose6D:
        """Rigid transform taking the assembled chair onto the current pose of x's group."""
        return compose(self.poses[x], invert(self.chair.gt_poses[self.roles[x]]))


def write_connection(tensor: np.ndarray, poses, x: int, y: int) -> None:
    """C(x, y) = pose of y in x's frame, and C(y, x) its inverse."""
    rel = relative(poses[x], poses[y])
    tensor[x, y] = rel.as_array()
    tensor[y, x] = invert(rel).as_array()


def tensor_violations(state: AssemblyState, tol: float = 1e-6) -> list[str]:
    """Check the tensor invariants (symmetric support, mutual inverses, zero diagonal)."""
    errs = []
    C = state.tensor
    M = state.n_parts
    for x in range(M):
        if np.any(C[x, x] != 0):
            errs.append(f"diagonal {x}")
        for y in range(x + 1, M):
            zx, zy = not np.any(C[x, y]), not np.any(C[y, x])
            if zx != zy:
                errs.append(f"support {x},{y}")
            elif not zx:
                ident = compose(Pose6D.from_array(C[x, y]), Pose6D.from_array(C[y, x]))
                if np.max(np.abs(ident.as_homogeneous() - np.eye(4))) > tol:
                    errs.append(f"inverse {x},{y}")
                if state.groups.find(x) != state.groups.find(y):
                    errs.append(f"cross-group entry {x},{y}")
                rel = relative(state.poses[x], state.poses[y]).as_homogeneous()
                if np.max(np.abs(rel - Pose6D.from_array(C[x, y]).as_homogeneous())) > tol:
                    errs.append(f"stale entry {x},{y}")
    return errs
