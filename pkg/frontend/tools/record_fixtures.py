#!/usr/bin/env python3
"""Record labeling-service responses into the UI contract-test fixtures.

Spins up the real HTTP service over a synthetic 30-cluster session and
captures every exchange the UI performs, normalizing temp paths. Rerun
whenever the service API changes:

    python3 frontend/tools/record_fixtures.py
"""

import json
import tempfile
import threading
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from protomask.cluster import cluster, save_clustering
from protomask.formats import PatchEmbeddingSet, PatchRecord, write_embedding_set
from protomask.labels import TissueLabelMap
from protomask.rng import Splitmix64
from protomask.service import LabelingService, make_server

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "session.json"


def call(base, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def main():
    workdir = Path(tempfile.mkdtemp(prefix="fixture_"))
    g = Splitmix64(17)
    centers = np.eye(3, 8)
    records = []
    for i in range(90):
        cls = i % 3
        vec = centers[cls] + 0.3 * g.fill_gaussian(8)
        vec /= np.linalg.norm(vec)
        records.append(PatchRecord(patch_id=i, source_image_id=f"img_{cls}", x=0, y=0,
                                   embedding=vec.astype(np.float32),
                                   gt_proportions={cls: 1.0}))
    eset = PatchEmbeddingSet(dim=8, records=records)
    write_embedding_set(eset, workdir / "patches.esf")
    save_clustering(cluster(eset.matrix(), 30, restarts=2, rng_seed=5),
                    workdir / "clustering.json")
    label_map = TissueLabelMap.from_names(["tumor", "stroma", "other"])

    service = LabelingService(workdir / "data")
    httpd = make_server(service, port=0)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"

    fx = {}
    status, summary = call(base, "POST", "/sessions", {
        "embeddings": str(workdir / "patches.esf"),
        "clustering": str(workdir / "clustering.json"),
        "label_map": label_map.to_json_obj(),
        "t": 10, "strategy": "central", "seed": 0,
    })
    assert status == 201, summary
    sid = summary["session_id"]
    fx["create"] = {"status": status, "body": summary}
    fx["summary_initial"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}")))
    fx["clusters_initial"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}/clusters")))
    fx["card_0_pending"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}/clusters/0")))

    fx["verdict_0_ok"] = dict(zip(("status", "body"), call(
        base, "POST", f"/sessions/{sid}/clusters/0/verdict",
        {"decision": "tissue", "class_id": 1})))
    fx["card_0_decided"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}/clusters/0")))
    fx["summary_after_first"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}")))
    fx["verdict_0_conflict"] = dict(zip(("status", "body"), call(
        base, "POST", f"/sessions/{sid}/clusters/0/verdict",
        {"decision": "drop"})))
    fx["verdict_unknown_class"] = dict(zip(("status", "body"), call(
        base, "POST", f"/sessions/{sid}/clusters/1/verdict",
        {"decision": "tissue", "class_id": 99})))

    for j in range(1, 30):
        status, _ = call(base, "POST", f"/sessions/{sid}/clusters/{j}/verdict",
                         {"decision": "drop"} if j == 7 else {"decision": "tissue", "class_id": j % 3})
        assert status == 200
    fx["summary_complete"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}")))
    fx["clusters_complete"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}/clusters")))
    fx["finalize_ok"] = dict(zip(("status", "body"), call(base, "POST", f"/sessions/{sid}/finalize")))
    fx["summary_finalized"] = dict(zip(("status", "body"), call(base, "GET", f"/sessions/{sid}")))

    httpd.shutdown()
    httpd.server_close()

    text = json.dumps(fx, indent=2, sort_keys=True)
    text = text.replace(str(workdir), "/data")
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(text + "\n")
    print(f"wrote {OUT} ({len(fx)} exchanges, session {sid})")


if __name__ == "__main__":
    main()
