"""Prototype-mixture classifier fit on weakly labeled support features.

The model is one foreground prototype plus a growing mixture of background
prototypes, all unit vectors in feature space. Fitting alternates a single
hard-assignment pass (argmax of dot products, which equal cosines since
both sides are unit length) with mean/renormalize updates:

1. assign every support vector to its nearest prototype (index 0 is
   foreground; ties go to the lowest index, so foreground wins exact ties);
2. re-estimate each background prototype as the normalized mean of the
   background-labeled vectors assigned to it (empty clusters keep their
   previous value);
3. if background-labeled vectors were assigned to the foreground prototype
   (false positives) and the mixture has room, spawn one new background
   prototype as the normalized mean of those vectors;
4. re-estimate the foreground prototype as the normalized mean of the
   foreground-labeled vectors assigned to foreground (kept if none).

The loop stops as soon as an assignment pass finds zero false positives,
when no spawn is possible and the assignment reached a fixed point, or at
the iteration cap. The zero-false-positive iteration still refits the
prototypes from its assignment (steps 2 and 4), but the refit is kept only
if it itself produces no false positives; otherwise the prototypes that
produced the clean assignment are returned. Either way the returned set
reproduces zero support false positives under re-assignment, exactly.

Weak labels use 1 = foreground, 0 = background; assignment indices use
0 = foreground, 1..K = background mixture components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSupportError, FormatError, ShapeError
from .feature_store import NormalizedFeatureMap, UNIT_NORM_ATOL
from .annotation import PatchLabelGrid

PROTO_FORMAT = "promi-prototypes"
PROTO_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Fitting switches. Defaults are the engine's standard operating point
    (two background prototypes, both refinement stages on).

    The assignment tie rule is fixed (lowest index wins) and not
    configurable.
    """

    k_max: int = 2
    bg_mixture_enabled: bool = True
    fg_refinement_enabled: bool = True
    max_iterations: int = 100

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class FitDiagnostics:
    """Counters recorded during fit.

    iterations_run counts assignment passes; stop_reason is one of
    "init", "no_false_positives", "fixed_point", "max_iterations".
    """

    iterations_run: int = 0
    spawn_events: int = 0
    empty_cluster_events: int = 0
    stop_reason: str = "init"


@dataclass(frozen=True)
class PrototypeSet:
    """One foreground prototype and 1..k_max background prototypes.

    All prototypes are unit-norm float64 vectors; ``bg`` has shape (K, D)
    in spawn order.
    """

    fg: np.ndarray
    bg: np.ndarray
    k_max: int
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)

    def __post_init__(self):
        if self.fg.ndim != 1:
            raise ShapeError("fg prototype must be a vector")
        if self.bg.ndim != 2 or self.bg.shape[1] != self.fg.shape[0]:
            raise ShapeError("bg prototypes must be (K, D) matching fg depth")
        if not 1 <= len(self.bg) <= self.k_max:
            raise ShapeError(
                f"need 1..k_max={self.k_max} bg prototypes, got {len(self.bg)}")
        norms = np.linalg.norm(np.vstack([self.fg[None, :], self.bg]), axis=1)
        if np.abs(norms - 1.0).max() > UNIT_NORM_ATOL:
            raise ShapeError("prototypes must be unit length")
        self.fg.setflags(write=False)
        self.bg.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, PrototypeSet):
            return NotImplemented
        return (self.k_max == other.k_max
                and self.diagnostics == other.diagnostics
                and np.array_equal(self.fg, other.fg)
                and np.array_equal(self.bg, other.bg))

    @property
    def depth(self) -> int:
        return self.fg.shape[0]

    @property
    def num_bg(self) -> int:
        return len(self.bg)

    def stacked(self) -> np.ndarray:
        """(K+1, D) matrix with foreground as row 0."""
        return np.vstack([self.fg[None, :], self.bg])


@dataclass(frozen=True)
class SupportBatch:
    """Paired support features and patch labels, flattened row-major.

    ``vectors`` is (M, D) float32 (unit rows), ``labels`` is (M,) uint8
    with 1 = foreground. Construction validates shapes only; a single-class
    batch is surfaced as DegenerateSupportError by init_prototypes.
    """

    vectors: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.labels.ndim != 1:
            raise ShapeError("vectors must be (M, D) and labels (M,)")
        if len(self.vectors) != len(self.labels) or len(self.vectors) == 0:
            raise ShapeError("vectors and labels must pair up and be non-empty")
        self.vectors.setflags(write=False)
        self.labels.setflags(write=False)

    @classmethod
    def from_maps(cls, features: list[NormalizedFeatureMap],
                  labels: list[PatchLabelGrid]) -> "SupportBatch":
        if len(features) != len(labels) or not features:
            raise ShapeError("need equally many feature maps and label grids")
        vecs, labs = [], []
        for fmap, grid in zip(features, labels):
            if (fmap.grid_h, fmap.grid_w) != (grid.grid_h, grid.grid_w):
                raise ShapeError(
                    f"feature grid {fmap.grid_h}x{fmap.grid_w} != "
                    f"label grid {grid.grid_h}x{grid.grid_w}")
            if fmap.depth != features[0].depth:
                raise ShapeError("all feature maps must share one depth")
            vecs.append(fmap.vectors())
            labs.append(grid.flat())
        return cls(vectors=np.ascontiguousarray(np.concatenate(vecs)),
                   labels=np.ascontiguousarray(np.concatenate(labs)))

    @property
    def depth(self) -> int:
        return self.vectors.shape[1]


def _unit_mean(vectors: np.ndarray) -> np.ndarray:
    """Normalized mean of rows, accumulated in float64 row-major order."""
    mean = np.add.reduce(vectors.astype(np.float64), axis=0) / len(vectors)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        # Mean of opposing unit vectors can vanish; keep a deterministic
        # direction rather than dividing by zero.
        out = np.zeros(vectors.shape[1], dtype=np.float64)
        out[0] = 1.0
        return out
    return mean / norm


def init_prototypes(batch: SupportBatch) -> PrototypeSet:
    """Class-mean initialization: one foreground and one background
    prototype, each the normalized mean of its labeled vectors.

    Raises DegenerateSupportError if the batch is single-class.
    """
    fg_mask = batch.labels == 1
    bg_mask = batch.labels == 0
    if not fg_mask.any() or not bg_mask.any():
        raise DegenerateSupportError(
            "support batch needs at least one foreground and one background "
            "patch label")
    fg = _unit_mean(batch.vectors[fg_mask])
    bg = _unit_mean(batch.vectors[bg_mask])
    return PrototypeSet(fg=fg, bg=bg[None, :], k_max=1,
                        diagnostics=FitDiagnostics())


def assign(features, protos: PrototypeSet) -> np.ndarray:
    """Hard-assign vectors to the nearest prototype by dot product.

    ``features`` may be a SupportBatch, a NormalizedFeatureMap, or an
    (M, D) array. Returns int64 indices in 0..K (0 = foreground), shaped
    (M,) for batches/arrays and (Gh, Gw) for maps. Ties resolve to the
    lowest index, so foreground wins exact ties.
    """
    grid_shape = None
    if isinstance(features, SupportBatch):
        vectors = features.vectors
    elif isinstance(features, NormalizedFeatureMap):
        grid_shape = (features.grid_h, features.grid_w)
        vectors = features.vectors()
    else:
        vectors = np.asarray(features)
    if vectors.ndim != 2 or vectors.shape[1] != protos.depth:
        raise ShapeError(
            f"features of depth {vectors.shape[-1]} incompatible with "
            f"prototypes of depth {protos.depth}")
    scores = vectors.astype(np.float64) @ protos.stacked().T
    out = np.argmax(scores, axis=1)  # first max: lowest-index tie rule
    return out.reshape(grid_shape) if grid_shape else out


def fit(batch: SupportBatch, cfg: FitConfig = FitConfig()) -> PrototypeSet:
    """Fit the prototype mixture on a weakly labeled support batch.

    Deterministic: a pure function of (batch, cfg). With both refinement
    switches off this returns init_prototypes(batch) unchanged (the
    plain nearest-class-mean baseline).
    """
    protos = init_prototypes(batch)
    if not cfg.bg_mixture_enabled and not cfg.fg_refinement_enabled:
        return protos

    fg = protos.fg
    bg = [protos.bg[0]]
    bg_labeled = batch.labels == 0
    fg_labeled = batch.labels == 1
    spawn_events = 0
    empty_cluster_events = 0
    iterations_run = 0
    stop_reason = "max_iterations"
    prev_assign = None

    def current_set():
        return PrototypeSet(fg=fg, bg=np.vstack(bg), k_max=cfg.k_max,
                            diagnostics=FitDiagnostics())

    def update_step(yhat, false_pos, can_spawn):
        nonlocal fg, spawn_events, empty_cluster_events
        if cfg.bg_mixture_enabled:
            for k in range(len(bg)):
                members = bg_labeled & (yhat == k + 1)
                if members.any():
                    bg[k] = _unit_mean(batch.vectors[members])
                else:
                    empty_cluster_events += 1
            if can_spawn and false_pos.any():
                bg.append(_unit_mean(batch.vectors[false_pos]))
                spawn_events += 1
        if cfg.fg_refinement_enabled:
            true_pos = fg_labeled & (yhat == 0)
            if true_pos.any():
                fg = _unit_mean(batch.vectors[true_pos])

    for _ in range(cfg.max_iterations):
        yhat = assign(batch, current_set())
        iterations_run += 1

        false_pos = bg_labeled & (yhat == 0)
        if not false_pos.any():
            stop_reason = "no_false_positives"
            # Final refit from the clean assignment, kept only if it stays
            # clean itself; otherwise return the prototypes that produced
            # the zero-false-positive assignment.
            keep_fg, keep_bg = fg, list(bg)
            keep_counters = (spawn_events, empty_cluster_events)
            update_step(yhat, false_pos, can_spawn=False)
            refit_yhat = assign(batch, current_set())
            if (bg_labeled & (refit_yhat == 0)).any():
                fg, bg[:] = keep_fg, keep_bg
                spawn_events, empty_cluster_events = keep_counters
            break
        can_spawn = cfg.bg_mixture_enabled and len(bg) < cfg.k_max
        if (not can_spawn and prev_assign is not None
                and np.array_equal(yhat, prev_assign)):
            # Updates would recompute the same member means: fixed point.
            stop_reason = "fixed_point"
            break

        update_step(yhat, false_pos, can_spawn)
        prev_assign = yhat

    return PrototypeSet(
        fg=fg, bg=np.vstack(bg), k_max=cfg.k_max,
        diagnostics=FitDiagnostics(
            iterations_run=iterations_run,
            spawn_events=spawn_events,
            empty_cluster_events=empty_cluster_events,
            stop_reason=stop_reason,
        ))


def serialize_prototypes(protos: PrototypeSet) -> bytes:
    """Lossless UTF-8 JSON encoding of a prototype set."""
    payload = {
        "format": PROTO_FORMAT,
        "version": PROTO_VERSION,
        "depth": protos.depth,
        "k_max": protos.k_max,
        "num_bg": protos.num_bg,
        "fg": protos.fg.tolist(),
        "bg": protos.bg.tolist(),
        "diagnostics": {
            "iterations_run": protos.diagnostics.iterations_run,
            "spawn_events": protos.diagnostics.spawn_events,
            "empty_cluster_events": protos.diagnostics.empty_cluster_events,
            "stop_reason": protos.diagnostics.stop_reason,
        },
    }
    return (json.dumps(payload, separators=(",", ":")) + "\n").encode()


def deserialize_prototypes(blob: bytes) -> PrototypeSet:
    """Inverse of serialize_prototypes. Corrupt payloads raise FormatError."""
    try:
        payload = json.loads(blob.decode("utf-8"))
        if payload.get("format") != PROTO_FORMAT:
            raise FormatError(
                f"not a prototype payload (format={payload.get('format')!r})")
        if payload.get("version") != PROTO_VERSION:
            raise FormatError(
                f"unsupported prototype payload version {payload.get('version')!r}")
        fg = np.asarray(payload["fg"], dtype=np.float64)
        bg = np.asarray(payload["bg"], dtype=np.float64)
        if bg.ndim != 2 or fg.ndim != 1:
            raise FormatError("prototype arrays have wrong rank")
        if fg.shape[0] != payload["depth"] or bg.shape != (payload["num_bg"],
                                                           payload["depth"]):
            raise FormatError("prototype array shapes disagree with header")
        diag = payload["diagnostics"]
        return PrototypeSet(
            fg=fg, bg=bg, k_max=int(payload["k_max"]),
            diagnostics=FitDiagnostics(
                iterations_run=int(diag["iterations_run"]),
                spawn_events=int(diag["spawn_events"]),
                empty_cluster_events=int(diag["empty_cluster_events"]),
                stop_reason=str(diag["stop_reason"]),
            ))
    except FormatError:
        raise
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt prototype payload: {exc}") from exc


def save_prototypes(protos: PrototypeSet, path) -> None:
    from pathlib import Path

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(serialize_prototypes(protos))


def load_prototypes(path) -> PrototypeSet:
    from pathlib import Path

    from .errors import IoError

    p = Path(path)
    if not p.is_file():
        raise IoError(f"prototype file not found: {p}")
    return deserialize_prototypes(p.read_bytes())
