from .io import (
    DatasetManifest,
    FormatError,
    FrameEntry,
    ManifestError,
    format_manifest,
    load_depth_map,
    load_manifest,
    load_pointcloud_bin,
    parse_manifest,
    sample_frames,
    sample_indices,
    save_depth_map,
    save_pointcloud_bin,
)
from .synthetic import (
    DEFAULT_CAMERA,
    DEFAULT_GT,
    PRESETS,
    LidarPattern,
    NoiseConfig,
    SyntheticScene,
    intensity_frame,
    make_scene,
    render_sequence,
    render_synthetic,
)
