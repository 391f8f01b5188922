from .scene import CLASS_NAMES, PALETTE, ObjectInstance, generate_scene
from .submaps import Submap, assign_gt_submap, slice_submaps
from .queries import QueryDescription, compass_word, generate_queries, perturb_queries
from .serialize import Dataset, build_dataset, load_dataset, save_dataset
from .vocab import Vocabulary

__all__ = [
    "CLASS_NAMES", "PALETTE", "ObjectInstance", "generate_scene",
    "Submap", "assign_gt_submap", "slice_submaps",
    "QueryDescription", "compass_word", "generate_queries", "perturb_queries",
    "Dataset", "build_dataset", "load_dataset", "save_dataset",
    "Vocabulary",
]
