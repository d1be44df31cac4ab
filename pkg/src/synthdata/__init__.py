"""
Synthetic shapes benchmark.
"""
from .scenes import (
    generate_dataset,
    generate_samples,
    generate_scene,
    make_resolver,
    write_dataset,
)

__all__ = ["generate_dataset", "generate_samples", "generate_scene", "make_resolver", "write_dataset"]
