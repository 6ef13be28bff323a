"""Dataset directory layout and (de)serialisation.

A dataset directory holds ``manifest.json``, one ``chair_<id>.json`` per
chair and one ``part_<id>_<x>.obj`` mesh per part. Floats are written with
9 significant digits, and re-serialising a loaded dataset reproduces the
same bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from partforge.assets.generator import generate_chair
from partforge.assets.types import ChairAsset, ConnectionPoint, DatasetManifest, GraspRegion, Part
from partforge.errors import SchemaVersionMismatch
from partforge.geom import Pose6D, load_obj, save_obj

SCHEMA_VERSION = 1


def _f(x) -> float:
    return float(f"{float(x):.9g}")


def _vec(v) -> list[float]:
    return [_f(x) for x in v]


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def chair_to_dict(chair: ChairAsset) -> dict:
    parts = []
    for p in chair.parts:
        parts.append({
            "id": p.id,
            "mesh": f"part_{chair.id}_{p.id}.obj",
            "equivalence_class": p.equivalence_class,
            "connections": [
                {"vector": _vec(c.as_vector()), "mate_part": c.mate_part, "mate_connection": c.mate_connection}
                for c in p.connections
            ],
            "grasp_regions": [
                {"center": _vec(g.center), "half_extents": _vec(g.half_extents),
                 "approach_dirs": [_vec(d) for d in g.approach_dirs]}
                for g in p.grasp_regions
            ],
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "id": chair.id,
        "difficulty": chair.difficulty,
        "layout": chair.layout,
        "gt_poses": [_vec(p.as_array()) for p in chair.gt_poses],
        "gt_adjacency": sorted(list(a) for a in chair.gt_adjacency),
        "intended_pairs": sorted(list(a) for a in chair.intended_pairs),
        "assembly_order": [list(a) for a in chair.assembly_order],
        "parts": parts,
    }


def chair_from_dict(d: dict, meshes) -> ChairAsset:
    parts = []
    for pd, mesh in zip(d["parts"], meshes):
        conns = tuple(
            ConnectionPoint(tuple(c["vector"][0:3]), tuple(c["vector"][3:6]), tuple(c["vector"][6:9]),
                            c["mate_part"], c["mate_connection"])
            for c in pd["connections"]
        )
        grasps = tuple(
            GraspRegion(tuple(g["center"]), tuple(g["half_extents"]), tuple(tuple(a) for a in g["approach_dirs"]))
            for g in pd["grasp_regions"]
        )
        parts.append(Part(pd["id"], mesh, conns, grasps, pd["equivalence_class"]))
    return ChairAsset(
        id=d["id"],
        parts=tuple(parts),
        gt_poses=tuple(Pose6D.from_array(p) for p in d["gt_poses"]),
        gt_adjacency=frozenset(tuple(a) for a in d["gt_adjacency"]),
        difficulty=d["difficulty"],
        layout=d["layout"],
        assembly_order=tuple(tuple(a) for a in d["assembly_order"]),
        intended_pairs=frozenset(tuple(a) for a in d["intended_pairs"]),
    )


def save_dataset(manifest: DatasetManifest, chairs, path) -> None:
    """Write ``manifest`` and ``chairs`` under directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _dump({
        "schema_version": SCHEMA_VERSION,
        "easy_train": list(manifest.easy_train),
        "hard_train": list(manifest.hard_train),
        "test": list(manifest.test),
        "n_train": manifest.n_train,
        "n_test": manifest.n_test,
        "config": manifest.config,
    }, path / "manifest.json")
    for chair in chairs:
        for p in chair.parts:
            save_obj(p.mesh, path / f"part_{chair.id}_{p.id}.obj")
        _dump(chair_to_dict(chair), path / f"chair_{chair.id}.json")


def _read_json(path: Path) -> dict:
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: expected schema_version {SCHEMA_VERSION}")
    return d


def load_chair(path, chair_id: int) -> ChairAsset:
    path = Path(path)
    d = _read_json(path / f"chair_{chair_id}.json")
    meshes = [load_obj(path / pd["mesh"]) for pd in d["parts"]]
    return chair_from_dict(d, meshes)


def load_manifest(path) -> DatasetManifest:
    d = _read_json(Path(path) / "manifest.json")
    return DatasetManifest(tuple(d["easy_train"]), tuple(d["hard_train"]), tuple(d["test"]), d.get("config", {}))


def load_dataset(path):
    """Return ``(manifest, {chair_id: ChairAsset})``."""
    manifest = load_manifest(path)
    return manifest, {cid: load_chair(path, cid) for cid in manifest.all_ids()}


def build_dataset(n_chairs: int = 40, seed: int = 0, *, test_fraction: float = 0.2,
                  hard_fraction: float = 0.25, max_parts: int = 8, n_test: int | None = None):
    """Generate ``n_chairs`` chairs and split them into easy/hard train and test.

    Chair ``i`` is generated from its own child seed, so a chair does not
    change when ``n_chairs`` grows.
    """
    if n_chairs < 2:
        raise ValueError("need at least 2 chairs")
    n_test = int(round(n_chairs * test_fraction)) if n_test is None else n_test
    n_test = min(max(n_test, 1), n_chairs - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_chairs)
    test_ids = sorted(int(i) for i in order[:n_test])
    child = np.random.SeedSequence(seed).spawn(n_chairs)
    chairs = []
    for i in range(n_chairs):
        s = int(child[i].generate_state(1)[0])
        difficulty = "hard" if np.random.default_rng(s).random() < hard_fraction else "easy"
        chairs.append(generate_chair(s, difficulty, max_parts=max_parts, chair_id=i))
    train = [c for c in chairs if c.id not in test_ids]
    manifest = DatasetManifest(
        easy_train=tuple(c.id for c in train if c.difficulty == "easy"),
        hard_train=tuple(c.id for c in train if c.difficulty == "hard"),
        test=tuple(test_ids),
        config={"n_chairs": n_chairs, "seed": seed, "test_fraction": test_fraction,
                "hard_fraction": hard_fraction, "max_parts": max_parts, "n_test": n_test},
    )
    return manifest, chairs
