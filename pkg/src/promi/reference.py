"""Straight-line reference implementation of fitting and prediction.

This is deliberately unoptimized pure Python over lists of floats: no
shared numeric kernels with the production modules, so the two can check
each other. Semantics mirror the documented contracts exactly: lowest-index
argmax ties, one assignment pass per iteration, background updates from
background-labeled members only, single spawn per iteration from the
false-positive mean, stop on zero false positives (prototypes from before
any refit), fixed-point stop when spawning is impossible, iteration cap.

Sums run sequentially in row-major order, so results agree with the
vectorized implementation to ~1e-9 rather than bit-exactly. The
zero-false-positive exit mirrors the production rule: refit from the clean
assignment, keep the refit only if it stays clean.
"""

from __future__ import annotations

import math

from .errors import DegenerateSupportError
from .feature_store import NormalizedFeatureMap
from .inference import SegmentationMask
from .prototypes import (FitConfig, FitDiagnostics, PrototypeSet,
                         SupportBatch)

import numpy as np  # used only to package results into the shared types


def _unit_mean_rows(rows: list[list[float]]) -> list[float]:
    depth = len(rows[0])
    acc = [0.0] * depth
    for row in rows:
        for j in range(depth):
            acc[j] += row[j]
    n = len(rows)
    mean = [v / n for v in acc]
    sq = 0.0
    for v in mean:
        sq += v * v
    norm = math.sqrt(sq)
    if norm == 0.0:
        out = [0.0] * depth
        out[0] = 1.0
        return out
    return [v / norm for v in mean]


def _argmax_lowest(scores: list[float]) -> int:
    best, best_idx = scores[0], 0
    for idx in range(1, len(scores)):
        if scores[idx] > best:
            best, best_idx = scores[idx], idx
    return best_idx


def _assign_all(vectors, protos) -> list[int]:
    out = []
    for vec in vectors:
        scores = []
        for proto in protos:
            dot = 0.0
            for a, b in zip(vec, proto):
                dot += a * b
            scores.append(dot)
        out.append(_argmax_lowest(scores))
    return out


def reference_fit(batch: SupportBatch,
                  cfg: FitConfig = FitConfig()) -> PrototypeSet:
    """Same contract as prototypes.fit, independently implemented."""
    vectors = [[float(v) for v in row] for row in batch.vectors]
    labels = [int(v) for v in batch.labels]
    fg_rows = [vec for vec, lab in zip(vectors, labels) if lab == 1]
    bg_rows = [vec for vec, lab in zip(vectors, labels) if lab == 0]
    if not fg_rows or not bg_rows:
        raise DegenerateSupportError(
            "support batch needs at least one foreground and one background "
            "patch label")
    fg = _unit_mean_rows(fg_rows)
    bg = [_unit_mean_rows(bg_rows)]

    if not cfg.bg_mixture_enabled and not cfg.fg_refinement_enabled:
        return _package(fg, bg, k_max=1, diag=FitDiagnostics())

    spawn_events = 0
    empty_cluster_events = 0
    iterations_run = 0
    stop_reason = "max_iterations"
    prev_assign = None

    def update_step(yhat, fp_rows, can_spawn):
        nonlocal fg, spawn_events, empty_cluster_events
        if cfg.bg_mixture_enabled:
            for k in range(len(bg)):
                members = [vec for vec, lab, pred
                           in zip(vectors, labels, yhat)
                           if lab == 0 and pred == k + 1]
                if members:
                    bg[k] = _unit_mean_rows(members)
                else:
                    empty_cluster_events += 1
            if can_spawn and fp_rows:
                bg.append(_unit_mean_rows(fp_rows))
                spawn_events += 1
        if cfg.fg_refinement_enabled:
            tp_rows = [vec for vec, lab, pred in zip(vectors, labels, yhat)
                       if lab == 1 and pred == 0]
            if tp_rows:
                fg = _unit_mean_rows(tp_rows)

    def has_false_positive(pred):
        for lab, p in zip(labels, pred):
            if lab == 0 and p == 0:
                return True
        return False

    for _ in range(cfg.max_iterations):
        yhat = _assign_all(vectors, [fg] + bg)
        iterations_run += 1

        fp_rows = [vec for vec, lab, pred in zip(vectors, labels, yhat)
                   if lab == 0 and pred == 0]
        if not fp_rows:
            stop_reason = "no_false_positives"
            keep_fg, keep_bg = fg, [list(row) for row in bg]
            keep_counters = (spawn_events, empty_cluster_events)
            update_step(yhat, fp_rows, can_spawn=False)
            refit_yhat = _assign_all(vectors, [fg] + bg)
            if has_false_positive(refit_yhat):
                fg = keep_fg
                bg[:] = keep_bg
                spawn_events, empty_cluster_events = keep_counters
            break
        can_spawn = cfg.bg_mixture_enabled and len(bg) < cfg.k_max
        if not can_spawn and prev_assign is not None and yhat == prev_assign:
            stop_reason = "fixed_point"
            break

        update_step(yhat, fp_rows, can_spawn)
        prev_assign = yhat

    return _package(fg, bg, k_max=cfg.k_max, diag=FitDiagnostics(
        iterations_run=iterations_run, spawn_events=spawn_events,
        empty_cluster_events=empty_cluster_events, stop_reason=stop_reason))


def _package(fg, bg, k_max, diag) -> PrototypeSet:
    return PrototypeSet(fg=np.asarray(fg, dtype=np.float64),
                        bg=np.asarray(bg, dtype=np.float64),
                        k_max=k_max, diagnostics=diag)


def reference_predict(query: NormalizedFeatureMap,
                      protos: PrototypeSet) -> SegmentationMask:
    """Same contract as inference.predict, independently implemented."""
    gh, gw, depth = query.grid_h, query.grid_w, query.depth
    proto_rows = [[float(v) for v in protos.fg]]
    for row in protos.bg:
        proto_rows.append([float(v) for v in row])
    channels = len(proto_rows)

    logits = [[[0.0] * channels for _ in range(gw)] for _ in range(gh)]
    for r in range(gh):
        for c in range(gw):
            vec = [float(v) for v in query.data[r, c]]
            for k, proto in enumerate(proto_rows):
                dot = 0.0
                for a, b in zip(vec, proto):
                    dot += a * b
                logits[r][c][k] = dot

    out_h, out_w = query.image_h, query.image_w
    mask = [[0] * out_w for _ in range(out_h)]
    for y in range(out_h):
        sy = (y + 0.5) * gh / out_h - 0.5
        sy = min(max(sy, 0.0), gh - 1.0)
        y0 = min(int(math.floor(sy)), gh - 1)
        y1 = min(y0 + 1, gh - 1)
        fy = sy - y0
        for x in range(out_w):
            sx = (x + 0.5) * gw / out_w - 0.5
            sx = min(max(sx, 0.0), gw - 1.0)
            x0 = min(int(math.floor(sx)), gw - 1)
            x1 = min(x0 + 1, gw - 1)
            fx = sx - x0
            scores = []
            for k in range(channels):
                top = logits[y0][x0][k] * (1.0 - fx) + logits[y0][x1][k] * fx
                bot = logits[y1][x0][k] * (1.0 - fx) + logits[y1][x1][k] * fx
                scores.append(top * (1.0 - fy) + bot * fy)
            mask[y][x] = 1 if _argmax_lowest(scores) == 0 else 0

    return SegmentationMask(
        height=out_h, width=out_w,
        data=np.asarray(mask, dtype=np.uint8))
