from .geometry import (
    RWT_SEGMENTS,
    centroid,
    compute_areas,
    compute_dimensions,
    compute_rwt,
    label_phases,
    landmark_angle,
    shoelace,
)
from .io import read_dataset, write_dataset
from .phantom import (
    CardiacSequence,
    IndexLabels,
    PhantomParams,
    generate_dataset,
    generate_phantom_sequence,
    sample_phantom_params,
)
from .preprocess import (
    augment_crop,
    denormalize_targets,
    normalize_targets,
    preprocess_frame,
    preprocess_sequence,
)

__all__ = [
    "RWT_SEGMENTS", "centroid", "compute_areas", "compute_dimensions", "compute_rwt", "label_phases",
    "landmark_angle", "shoelace", "read_dataset", "write_dataset", "CardiacSequence", "IndexLabels",
    "PhantomParams", "generate_dataset", "generate_phantom_sequence", "sample_phantom_params",
    "augment_crop", "denormalize_targets", "normalize_targets", "preprocess_frame", "preprocess_sequence",
]
