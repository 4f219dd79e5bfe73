"""Feature-map data model, on-disk interchange, and L2 normalization.

A feature map is a Gh x Gw grid of D-dimensional patch embeddings plus the
pixel geometry of the image it came from. On disk a map is a pair of files:

* ``<name>.npy``  -- NPY v1.0, little-endian float32, C-contiguous, shape
  (Gh, Gw, D);
* ``<name>.json`` -- sidecar carrying ``image_h`` / ``image_w``.

Image geometry may instead be supplied by the caller (the benchmark
manifest carries it), in which case the sidecar is optional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IoError, ShapeError

NPY_DTYPE = np.dtype("<f4")

# L2 norm of a nonzero vector after normalization must sit within this of 1.
UNIT_NORM_ATOL = 1e-5


@dataclass(frozen=True)
class FeatureMap:
    """Immutable grid of patch feature vectors with source-image geometry.

    ``data`` has shape (grid_h, grid_w, depth). Patch size in pixels is
    image_h/grid_h by image_w/grid_w and need not be integral; mapping
    patches back to pixels is owned by the inference module.
    """

    grid_h: int
    grid_w: int
    depth: int
    data: np.ndarray = field(repr=False)
    image_h: int
    image_w: int

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1 or self.depth < 1:
            raise ShapeError(
                f"grid dims and depth must be >= 1, got "
                f"{self.grid_h}x{self.grid_w}x{self.depth}"
            )
        if self.image_h < 1 or self.image_w < 1:
            raise ShapeError(
                f"image dims must be positive, got {self.image_h}x{self.image_w}"
            )
        if self.data.shape != (self.grid_h, self.grid_w, self.depth):
            raise ShapeError(
                f"data shape {self.data.shape} != "
                f"({self.grid_h}, {self.grid_w}, {self.depth})"
            )
        if not np.isfinite(self.data).all():
            raise DataError("feature map contains NaN or Inf values")
        self.data.setflags(write=False)

    @classmethod
    def from_array(cls, data: np.ndarray, image_h: int, image_w: int) -> "FeatureMap":
        """Copy a (Gh, Gw, D) array into a map, coercing to the storage dtype."""
        arr = np.array(data, dtype=NPY_DTYPE, order="C", copy=True)
        if arr.ndim != 3:
            raise ShapeError(f"expected rank-3 array, got rank {arr.ndim}")
        gh, gw, d = arr.shape
        return cls(grid_h=gh, grid_w=gw, depth=d, data=arr,
                   image_h=image_h, image_w=image_w)

    def vectors(self) -> np.ndarray:
        """Row-major (Gh*Gw, D) view of the patch vectors."""
        return self.data.reshape(-1, self.depth)


@dataclass(frozen=True)
class NormalizedFeatureMap(FeatureMap):
    """Feature map whose nonzero vectors are unit length.

    Vectors that were exactly zero stay zero (they score cosine 0 against
    every prototype; the argmax tie rule resolves them deterministically);
    their count is kept as a diagnostic.
    """

    zero_vectors: int = 0


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def load_feature_map(path, *, image_h: int | None = None,
                     image_w: int | None = None) -> FeatureMap:
    """Load a feature map from an NPY file.

    Image geometry comes from explicit arguments when given, otherwise from
    the ``<name>.json`` sidecar written by :func:`save_feature_map`.

    Raises:
        IoError: file missing or unreadable.
        FormatError: malformed NPY header, wrong dtype, or missing geometry.
        ShapeError: array rank != 3.
        DataError: non-finite values.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"feature file not found: {path}")
    try:
        arr = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"malformed NPY file {path}: {exc}") from exc
    if arr.ndim != 3:
        raise ShapeError(f"{path}: expected rank-3 array, got rank {arr.ndim}")
    if arr.dtype != NPY_DTYPE:
        raise FormatError(
            f"{path}: expected little-endian float32, got {arr.dtype}"
        )
    if not np.isfinite(arr).all():
        raise DataError(f"{path}: feature map contains NaN or Inf values")

    if image_h is None or image_w is None:
        sidecar = _sidecar_path(path)
        if not sidecar.is_file():
            raise FormatError(
                f"{path}: no image geometry given and sidecar {sidecar.name} "
                f"is missing"
            )
        try:
            meta = json.loads(sidecar.read_text())
            image_h = int(meta["image_h"])
            image_w = int(meta["image_w"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad sidecar {sidecar}: {exc}") from exc

    gh, gw, d = arr.shape
    return FeatureMap(grid_h=gh, grid_w=gw, depth=d,
                      data=np.ascontiguousarray(arr),
                      image_h=image_h, image_w=image_w)


def save_feature_map(fmap: FeatureMap, path) -> None:
    """Write ``fmap`` as NPY plus a JSON geometry sidecar.

    ``load_feature_map(save_feature_map(m))`` reproduces every field.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.save(fh, np.ascontiguousarray(fmap.data, dtype=NPY_DTYPE))
        _sidecar_path(path).write_text(json.dumps(
            {"image_h": fmap.image_h, "image_w": fmap.image_w}) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def l2_normalize(fmap: FeatureMap) -> NormalizedFeatureMap:
    """Scale every patch vector to unit L2 norm.

    Zero vectors are left as zero and counted in ``zero_vectors``.
    Idempotent: normalizing an already-normalized map is a no-op up to
    float32 rounding.
    """
    if isinstance(fmap, NormalizedFeatureMap):
        return fmap
    # Norms accumulated in float64 for stability; data stays float32.
    norms = np.linalg.norm(fmap.data.astype(np.float64), axis=-1, keepdims=True)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    out = np.ascontiguousarray((fmap.data / safe), dtype=NPY_DTYPE)
    return NormalizedFeatureMap(
        grid_h=fmap.grid_h, grid_w=fmap.grid_w, depth=fmap.depth,
        data=out, image_h=fmap.image_h, image_w=fmap.image_w,
        zero_vectors=int(zero.sum()),
    )
