from hsonet.synthdata.folder import DatasetLoadError, load_folder, read_manifest, write_manifest, write_pair
from hsonet.synthdata.generator import (
    EASY,
    OCCLUDED,
    SEASONAL_ONLY,
    SHADOW,
    SMALL_TARGET,
    TAG_NAMES,
    GenerationError,
    ChangeOp,
    LabeledPair,
    Occluder,
    SceneObject,
    SceneSpec,
    change_mask,
    generate_pair,
    make_spec,
    render,
    render_clean,
)
from hsonet.synthdata.transforms import GeoTransform, TilingError, apply_transform, augment, sample_transform, tile, transform_pair

__all__ = [
    "EASY", "OCCLUDED", "SEASONAL_ONLY", "SHADOW", "SMALL_TARGET", "TAG_NAMES",
    "DatasetLoadError", "GenerationError", "ChangeOp", "GeoTransform", "LabeledPair", "Occluder", "SceneObject", "SceneSpec", "TilingError",
    "apply_transform", "augment", "change_mask", "generate_pair", "load_folder", "make_spec",
    "read_manifest", "render", "render_clean", "sample_transform", "tile", "transform_pair",
    "write_manifest", "write_pair",
]
