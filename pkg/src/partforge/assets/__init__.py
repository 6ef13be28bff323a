"""Chair assets: generation, annotation and dataset files."""
from partforge.assets.annotate import (
    CONNECT_THRESHOLD,
    annotate_chair,
    chamfer,
    compute_equivalence_classes,
    detect_connections,
    generate_grasp_regions,
    rotation_chamfer,
    tangent_for,
)
from partforge.assets.dataset import build_dataset, load_chair, load_dataset, load_manifest, save_dataset
from partforge.assets.generator import generate_chair
from partforge.assets.types import (
    MAX_CONNECTIONS,
    MAX_PARTS,
    ChairAsset,
    ConnectionPoint,
    DatasetManifest,
    GraspRegion,
    Part,
)

__all__ = [
    "CONNECT_THRESHOLD", "MAX_CONNECTIONS", "MAX_PARTS", "ChairAsset", "ConnectionPoint",
    "DatasetManifest", "GraspRegion", "Part", "annotate_chair", "build_dataset", "chamfer",
    "compute_equivalence_classes", "detect_connections", "generate_chair", "generate_grasp_regions",
    "load_chair", "load_dataset", "load_manifest", "rotation_chamfer", "save_dataset", "tangent_for",
]
