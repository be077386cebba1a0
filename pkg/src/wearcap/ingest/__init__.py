from .dataset import (
    ClipRecord,
    DatasetSplit,
    ManifestEntry,
    Recording,
    load_manifest,
    load_recordings,
    preprocess_recordings,
    segment_clips,
    split_dataset,
    write_manifest,
)
from .streams import (
    IMU_MODALITIES,
    MODALITIES,
    IngestError,
    SensorStream,
    fill_missing,
    fit_stats,
    imu_features,
    lowpass,
    orientation_feature,
    parse_stream,
    preprocess,
    resample,
    write_stream,
)

__all__ = [
    "ClipRecord", "DatasetSplit", "ManifestEntry", "Recording", "load_manifest",
    "load_recordings", "preprocess_recordings", "segment_clips", "split_dataset",
    "write_manifest", "IMU_MODALITIES", "MODALITIES", "IngestError", "SensorStream",
    "fill_missing", "fit_stats", "imu_features", "lowpass", "orientation_feature",
    "parse_stream", "preprocess", "resample", "write_stream",
]
