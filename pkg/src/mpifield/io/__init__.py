from .assets import load_checkpoint, load_mpi, mpi_file_size, save_checkpoint, save_mpi
from .bundle import composite_premultiplied, export_viewer_bundle
from .dataset import SceneDataset, ScenePhoto, load_scene, save_scene, split_ids
from .images import load_image, load_mask, resize_bilinear, save_image, save_mask

__all__ = [
    "SceneDataset",
    "ScenePhoto",
    "composite_premultiplied",
    "export_viewer_bundle",
    "load_checkpoint",
    "load_image",
    "load_mask",
    "load_mpi",
    "load_scene",
    "mpi_file_size",
    "resize_bilinear",
    "save_checkpoint",
    "save_image",
    "save_mask",
    "save_mpi",
    "save_scene",
    "split_ids",
]
