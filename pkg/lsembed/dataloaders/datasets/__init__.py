from .base import Dataset, Sample, load_manifest, write_manifest
from .synthetic import AttrGenConfig, HierGenConfig, generate_attributes, generate_hierarchy

__all__ = [
    "AttrGenConfig",
    "Dataset",
    "HierGenConfig",
    "Sample",
    "generate_attributes",
    "generate_hierarchy",
    "load_manifest",
    "write_manifest",
]
