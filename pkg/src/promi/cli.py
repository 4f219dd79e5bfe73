"""Command-line client for the segmentation service.

Every subcommand builds a JSON request and sends it to the FastAPI app --
in process by default, or to a running server via --server. Exit codes:
0 success, 1 internal error, 2 input error. Set PROMI_LOG to adjust log
verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger("promi.cli")


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k-max", type=int, default=2,
                        help="background prototype budget (default 2)")
    parser.add_argument("--no-bg-mixture", action="store_true",
                        help="disable background mixture growth/updates")
    parser.add_argument("--no-fg-refine", action="store_true",
                        help="disable foreground prototype refinement")
    parser.add_argument("--max-iters", type=int, default=100,
                        help="fit iteration safety cap (default 100)")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True,
                        help="benchmark manifest JSON")
    _add_fit_flags(parser)
    parser.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4],
                        help="comma-separated seed list (default 0,1,2,3,4)")
    parser.add_argument("--tasks", type=int, default=1000,
                        help="tasks per seed (default 1000)")
    parser.add_argument("--shots", type=int, default=1,
                        help="support images per task (default 1)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel tasks per seed (default 1)")
    parser.add_argument("--include-background-class", action="store_true",
                        help="add a pooled background class to the mean-IoU")
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promi",
        description="Few-shot binary segmentation from bounding boxes: "
                    "fit prototypes, predict masks, run benchmarks.")
    parser.add_argument("--server", default=None,
                        help="URL of a running promi service "
                             "(default: run in process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a prototype set on a support set")
    p_fit.add_argument("--support", required=True,
                       help="support manifest JSON")
    _add_fit_flags(p_fit)
    p_fit.add_argument("--out", required=True,
                       help="output prototype file (JSON)")

    p_pred = sub.add_parser("predict", help="segment a query feature map")
    p_pred.add_argument("--prototypes", required=True,
                        help="prototype file written by fit")
    p_pred.add_argument("--query", required=True,
                        help="query feature map (NPY with JSON sidecar)")
    p_pred.add_argument("--image-h", type=int, default=None)
    p_pred.add_argument("--image-w", type=int, default=None)
    p_pred.add_argument("--overlay-source", default=None,
                        help="source image to alpha-blend the mask onto")
    p_pred.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="run the episodic benchmark")
    _add_eval_flags(p_eval)

    p_sweep = sub.add_parser("sweep", help="benchmark over a parameter grid")
    _add_eval_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True,
                         choices=["k_max", "flags", "shots"])
    p_sweep.add_argument("--values", type=_int_list, default=None,
                         help="grid values for k_max/shots axes")

    p_synth = sub.add_parser("synth",
                             help="write synthetic benchmark fixtures")
    p_synth.add_argument("--scene", required=True,
                         help="scene JSON (single scene or {'scenes': [...]})")
    p_synth.add_argument("--images", type=int, default=6,
                         help="pool size per class (default 6)")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8008)

    return parser


class _InProcessClient:
    """Synchronous facade over the ASGI app, one event loop per request."""

    def __init__(self):
        from .service.app import create_app

        self._app = create_app()

    def _request(self, method: str, path: str, **kwargs):
        import asyncio

        import httpx

        async def go():
            transport = httpx.ASGITransport(app=self._app,
                                            raise_app_exceptions=False)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://promi.local",
                                         timeout=None) as client:
                return await client.request(method, path, **kwargs)

        return asyncio.run(go())

    def post(self, path: str, json: dict):
        return self._request("POST", path, json=json)

    def get(self, path: str):
        return self._request("GET", path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    return _InProcessClient()


def _post(client, path: str, payload: dict) -> tuple[int, dict]:
    resp = client.post(path, json=payload)
    try:
        body = resp.json()
    except ValueError:
        body = {"error": "bad-response", "message": resp.text}
    return resp.status_code, body


def _report_failure(status: int, body: dict) -> int:
    message = body.get("message") or body.get("detail") or body
    print(f"error ({status}): {message}", file=sys.stderr)
    return 2 if status in (400, 404, 422) else 1


def _config_payload(args) -> dict:
    return {
        "k_max": args.k_max,
        "bg_mixture_enabled": not args.no_bg_mixture,
        "fg_refinement_enabled": not args.no_fg_refine,
        "max_iterations": args.max_iters,
    }


def _cmd_fit(client, args) -> int:
    status, body = _post(client, "/fit", {
        "support_manifest_path": str(Path(args.support).resolve()),
        "config": _config_payload(args),
        "output_path": str(Path(args.out).resolve()),
    })
    if status != 200:
        return _report_failure(status, body)
    d = body["diagnostics"]
    print(f"fit: depth={body['depth']} bg_prototypes={body['num_bg']} "
          f"iterations={d['iterations_run']} spawns={d['spawn_events']} "
          f"stop={d['stop_reason']}")
    print(f"wrote {body['output_path']}")
    print(f"wrote {body['diagnostics_path']}")
    return 0


def _cmd_predict(client, args) -> int:
    out_dir = Path(args.out).resolve()
    stem = Path(args.query).stem
    payload = {
        "query_feature_path": str(Path(args.query).resolve()),
        "prototypes_path": str(Path(args.prototypes).resolve()),
        "image_h": args.image_h,
        "image_w": args.image_w,
        "mask_path": str(out_dir / f"{stem}_mask.png"),
        "rle_path": str(out_dir / f"{stem}_mask.rle.json"),
    }
    if args.overlay_source:
        payload["source_image_path"] = str(Path(args.overlay_source).resolve())
        payload["overlay_path"] = str(out_dir / f"{stem}_overlay.png")
    status, body = _post(client, "/predict", payload)
    if status != 200:
        return _report_failure(status, body)
    print(f"predict: {body['width']}x{body['height']} mask, "
          f"{body['foreground_pixels']} foreground pixels")
    for key in ("mask_path", "rle_path", "overlay_path"):
        if body.get(key):
            print(f"wrote {body[key]}")
    return 0


def _cmd_eval(client, args) -> int:
    out_dir = Path(args.out).resolve()
    status, body = _post(client, "/evaluate", {
        "manifest_path": str(Path(args.manifest).resolve()),
        "config": _config_payload(args),
        "seeds": args.seeds,
        "tasks_per_seed": args.tasks,
        "shots": args.shots,
        "include_background_class": args.include_background_class,
        "jobs": args.jobs,
        "report_path": str(out_dir / "report.json"),
        "csv_path": str(out_dir / "report.csv"),
    })
    if status != 200:
        return _report_failure(status, body)
    for seed, miou in zip(args.seeds, body["per_seed_mean_iou"]):
        print(f"seed {seed}: mean-IoU {miou:.4f}")
    print(f"mean over seeds: {body['mean_iou']:.4f} "
          f"({body['failed_tasks']} failed tasks)")
    print(f"wrote {body['report_path']}")
    print(f"wrote {body['csv_path']}")
    return 0


def _cmd_sweep(client, args) -> int:
    out_dir = Path(args.out).resolve()
    status, body = _post(client, "/sweep", {
        "manifest_path": str(Path(args.manifest).resolve()),
        "axis": args.axis,
        "values": args.values,
        "config": _config_payload(args),
        "seeds": args.seeds,
        "tasks_per_seed": args.tasks,
        "shots": args.shots,
        "include_background_class": args.include_background_class,
        "jobs": args.jobs,
        "json_path": str(out_dir / "sweep.json"),
        "csv_path": str(out_dir / "sweep.csv"),
        "plot_path": str(out_dir / "sweep.png"),
    })
    if status != 200:
        return _report_failure(status, body)
    for row in body["rows"]:
        print(f"{row['axis']}={row['value']}: mean-IoU {row['mean_iou']:.4f}")
    for key in ("json_path", "csv_path", "plot_path"):
        print(f"wrote {body[key]}")
    return 0


def _cmd_synth(client, args) -> int:
    status, body = _post(client, "/synthesize", {
        "scene_path": str(Path(args.scene).resolve()),
        "out_dir": str(Path(args.out).resolve()),
        "images_per_class": args.images,
    })
    if status != 200:
        return _report_failure(status, body)
    print(f"synth: classes {', '.join(body['classes'])}, "
          f"{body['files_written']} files")
    print(f"wrote {body['manifest_path']}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PROMI_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("promi.service.app:app", host=args.host, port=args.port,
                    log_level=os.environ.get("PROMI_LOG", "info").lower())
        return 0

    try:
        with _make_client(args.server) as client:
            return _COMMANDS[args.command](client, args)
    except ConnectionError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # client-side failures map to internal error
        if type(exc).__module__.startswith("httpx"):
            print(f"error: cannot reach service: {exc}", file=sys.stderr)
            return 1
        logger.exception("internal error")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
