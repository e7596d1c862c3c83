"""Multiplanar volumetric segmentation toolkit.

Pure numpy/scipy library for slicing 3D volumes along arbitrary orientations,
reconstructing and fusing per-view probability maps, building distance-weighted
loss maps, cleaning up symmetric-class confusions, and scoring results with
gap-aware metrics.  The neural slice segmenter is kept behind a file-based
subprocess protocol so the whole pipeline runs against built-in oracles.
"""

from mpseg.errors import DataError, MpsegError, ProtocolError
from mpseg.volume import (
    LabelVolume,
    ProbabilityVolume,
    Volume,
    VolumeGeometry,
    read_volume,
    sample_nearest,
    sample_trilinear,
    write_volume,
)
from mpseg.preprocess import StandardizationStats, clip_negatives, standardize
from mpseg.distance import (
    ClassDistanceField,
    CollisionReport,
    WeightMapParams,
    class_distances,
    detect_collisions,
    edt,
    erode_labels,
    gap_region,
    weight_map,
)
from mpseg.multiplanar import (
    SliceBatch,
    ViewGrid,
    ViewSet,
    extract_slices,
    fit_grid,
    fuse,
    generate_views,
    reconstruct_view,
)
from mpseg.postprocess import (
    ComponentStats,
    SymmetryPairs,
    connected_components,
    symmetric_cc_filter,
)
from mpseg.metrics import MetricsReport, dice, evaluate, gap_dice, hausdorff
from mpseg.phantom import PhantomShape, PhantomSpec, generate_phantom, two_sphere_spec
from mpseg.segmenter import (
    CorruptionConfig,
    SegmenterHandle,
    SliceManifest,
    corrupt_labels,
    dilate_labels,
    external_segmenter,
    oracle_corrupted,
    oracle_perfect,
    read_slice_batch,
    run_segmenter,
    validate_plugin_outputs,
    write_slice_batch,
)

__version__ = "0.1.0"
