"""Training-free prototype-mixture engine for few-shot binary segmentation
from bounding-box annotations, with an episodic evaluation harness."""

from .annotation import (BoundingBox, PatchLabelGrid, boxes_to_patch_labels,
                         mask_to_tight_boxes)
from .errors import (AnnotationError, DataError, DegenerateSupportError,
                     FormatError, IoError, ManifestError, PromiError,
                     ShapeError)
from .evaluation import (Episode, load_manifest, run_benchmark, run_task,
                         sweep)
from .feature_store import (FeatureMap, NormalizedFeatureMap, l2_normalize,
                            load_feature_map, save_feature_map)
from .inference import (LogitMap, SegmentationMask, argmax_mask,
                        compute_logits, predict, upsample_bilinear)
from .prototypes import (FitConfig, FitDiagnostics, PrototypeSet,
                         SupportBatch, assign, deserialize_prototypes, fit,
                         init_prototypes, serialize_prototypes)
from .reference import reference_fit, reference_predict
from .synth import SynthScene, generate_episode

__version__ = "0.1.0"

__all__ = [
    "AnnotationError", "BoundingBox", "DataError", "DegenerateSupportError",
    "Episode", "FeatureMap", "FitConfig", "FitDiagnostics", "FormatError",
    "IoError", "LogitMap", "ManifestError", "NormalizedFeatureMap",
    "PatchLabelGrid", "PromiError", "PrototypeSet", "SegmentationMask",
    "ShapeError", "SupportBatch", "SynthScene", "argmax_mask", "assign",
    "boxes_to_patch_labels", "compute_logits", "deserialize_prototypes",
    "fit", "generate_episode", "init_prototypes", "l2_normalize",
    "load_feature_map", "load_manifest", "mask_to_tight_boxes", "predict",
    "reference_fit", "reference_predict", "run_benchmark", "run_task",
    "save_feature_map", "serialize_prototypes", "sweep",
    "upsample_bilinear",
]
