import json

import pytest

from promi.annotation import mask_to_tight_boxes
from promi.cli import _InProcessClient
from promi.fixtures import write_scene_pool
from promi.mask_io import load_mask_png
from promi.prototypes import deserialize_prototypes
from promi.synth import separated_scene


@pytest.fixture(scope="module")
def client():
    with _InProcessClient() as c:
        yield c


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc")
    manifest_path = write_scene_pool([separated_scene(1), separated_scene(2)],
                                     out, images_per_class=4)
    manifest = json.loads(manifest_path.read_text())
    return {"dir": out, "manifest_path": manifest_path, "manifest": manifest}


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_fit_predict_flow_with_store(client, fixtures):
    out = fixtures["dir"]
    cls = "scene001"
    entries = fixtures["manifest"]["classes"][cls]
    support = [{
        "feature_path": str(out / e["feature_path"]),
        "image_h": e["image_h"],
        "image_w": e["image_w"],
        "boxes": e["boxes"],
    } for e in entries[:2]]
    resp = client.post("/fit", json={
        "support": support,
        "config": {"k_max": 2},
        "output_path": str(out / "protos.json"),
        "store_as": "demo",
    })
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["num_bg"] >= 1
    assert body["stored_as"] == "demo"
    protos = deserialize_prototypes((out / "protos.json").read_bytes())
    assert protos.depth == 6

    query = str(out / entries[3]["feature_path"])
    for proto_source in ({"prototypes_ref": "demo"},
                         {"prototypes_path": str(out / "protos.json")}):
        resp = client.post("/predict", json={
            "query_feature_path": query,
            "mask_path": str(out / "pred.png"),
            "include_rle": True,
            **proto_source,
        })
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert (body["height"], body["width"]) == (48, 48)
        mask = load_mask_png(out / "pred.png")
        assert int(mask.sum()) == sum(body["rle"]["counts"][1::2])


def test_predict_unknown_ref(client, fixtures):
    resp = client.post("/predict", json={
        "query_feature_path": str(fixtures["dir"] / "scene001/img_000.npy"),
        "prototypes_ref": "nope",
    })
    assert resp.status_code == 422


def test_evaluate_endpoint(client, fixtures, tmp_path):
    payload = {
        "manifest_path": str(fixtures["manifest_path"]),
        "seeds": [0, 1],
        "tasks_per_seed": 3,
        "shots": 2,
        "report_path": str(tmp_path / "report.json"),
        "csv_path": str(tmp_path / "report.csv"),
    }
    resp = client.post("/evaluate", json=payload)
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert 0.0 <= body["mean_iou"] <= 1.0
    assert len(body["per_seed_mean_iou"]) == 2
    report = json.loads((tmp_path / "report.json").read_text())
    assert report == body["report"]
    assert (tmp_path / "report.csv").read_text().startswith("seed,class")


def test_sweep_endpoint(client, fixtures, tmp_path):
    resp = client.post("/sweep", json={
        "manifest_path": str(fixtures["manifest_path"]),
        "axis": "k_max",
        "values": [1, 2],
        "seeds": [0],
        "tasks_per_seed": 2,
        "shots": 2,
        "csv_path": str(tmp_path / "sweep.csv"),
        "plot_path": str(tmp_path / "sweep.png"),
    })
    assert resp.status_code == 200, resp.text
    assert [r["value"] for r in resp.json()["rows"]] == [1, 2]
    assert (tmp_path / "sweep.csv").exists()
    assert (tmp_path / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_synthesize_endpoint(client, tmp_path):
    scene = separated_scene(7).to_dict()
    resp = client.post("/synthesize", json={
        "scenes": [scene],
        "out_dir": str(tmp_path / "synth"),
        "images_per_class": 3,
    })
    assert resp.status_code == 200, resp.text
    manifest_path = resp.json()["manifest_path"]
    manifest = json.loads(open(manifest_path).read())
    assert len(manifest["classes"]["scene007"]) == 3


def test_derive_boxes_matches_library(client, fixtures, tmp_path):
    mask_path = fixtures["dir"] / "scene001" / "mask.png"
    resp = client.post("/boxes/derive", json={"mask_path": str(mask_path),
                                              "connectivity": 8})
    assert resp.status_code == 200
    direct = [b.as_list() for b in
              mask_to_tight_boxes(load_mask_png(mask_path), connectivity=8)]
    assert resp.json()["boxes"] == direct


def test_input_errors_are_422(client, tmp_path):
    resp = client.post("/fit", json={
        "support": [{"feature_path": str(tmp_path / "missing.npy"),
                     "image_h": 8, "image_w": 8,
                     "boxes": [[0, 0, 4, 4]]}],
    })
    assert resp.status_code == 422
    resp = client.post("/evaluate", json={"manifest_path": "/does/not/exist"})
    assert resp.status_code == 422
    resp = client.post("/evaluate", json={})  # schema validation
    assert resp.status_code == 422


def test_degenerate_support_is_422(client, fixtures):
    out = fixtures["dir"]
    entry = fixtures["manifest"]["classes"]["scene001"][0]
    resp = client.post("/fit", json={
        "support": [{
            "feature_path": str(out / entry["feature_path"]),
            "image_h": entry["image_h"],
            "image_w": entry["image_w"],
            "boxes": [[0, 0, entry["image_w"], entry["image_h"]]],
        }],
    })
    assert resp.status_code == 422
    assert "foreground" in resp.json()["message"]
