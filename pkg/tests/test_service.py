import json
import threading
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from protomask.cluster import cluster, save_clustering
from protomask.dictionary import build_dictionary, central_sample
from protomask.formats import PatchEmbeddingSet, PatchRecord, write_embedding_set
from protomask.labels import TissueLabelMap
from protomask.rng import Splitmix64
from protomask.service import LabelingService, make_server


@pytest.fixture()
def corpus(tmp_path):
    """90-patch embedding set in 3 loose groups plus a k=30 clustering."""
    g = Splitmix64(17)
    centers = np.eye(3, 8)
    records = []
    for i in range(90):
        cls = i % 3
        vec = centers[cls] + 0.3 * g.fill_gaussian(8)
        vec = vec / np.linalg.norm(vec)
        records.append(
            PatchRecord(patch_id=i, source_image_id=f"img_{cls}", x=0, y=0,
                        embedding=vec.astype(np.float32),
                        gt_proportions={cls: 1.0})
        )
    eset = PatchEmbeddingSet(dim=8, records=records)
    esf = tmp_path / "patches.esf"
    write_embedding_set(eset, esf)
    result = cluster(eset.matrix(), 30, restarts=2, rng_seed=5)
    cpath = tmp_path / "clustering.json"
    save_clustering(result, cpath)
    label_map = TissueLabelMap.from_names(["alpha", "beta", "gamma"])
    return {"esf": esf, "clustering": cpath, "label_map": label_map,
            "eset": eset, "result": result}


@pytest.fixture()
def server(tmp_path):
    service = LabelingService(tmp_path / "data")
    httpd = make_server(service, port=0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield base, service
    httpd.shutdown()
    httpd.server_close()


def call(base, method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read()), dict(resp.headers)
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read()), dict(e.headers)


def start(base, corpus, t=10, strategy="central", seed=0):
    status, body, _ = call(base, "POST", "/sessions", {
        "embeddings": str(corpus["esf"]),
        "clustering": str(corpus["clustering"]),
        "label_map": corpus["label_map"].to_json_obj(),
        "t": t, "strategy": strategy, "seed": seed,
    })
    assert status == 201, body
    return body


class TestSessionLifecycle:
    def test_thirty_clusters_ten_representatives(self, server, corpus):
        base, _ = server
        summary = start(base, corpus, t=10)
        assert summary["k"] == 30
        assert summary["pending"] == 30
        assert summary["decided"] == 0
        status, listing, _ = call(base, "GET", f"/sessions/{summary['session_id']}/clusters")
        assert status == 200
        sizes = corpus["result"].cluster_sizes
        for card in listing["clusters"]:
            expected = min(10, int(sizes[card["cluster_index"]]))
            assert len(card["representatives"]) == expected
            assert card["status"] == "pending"

    def test_representative_order_matches_central_sample(self, server, corpus):
        base, _ = server
        summary = start(base, corpus, t=5)
        sid = summary["session_id"]
        for j in (0, 7, 29):
            status, card, _ = call(base, "GET", f"/sessions/{sid}/clusters/{j}")
            assert status == 200
            got = [r["patch_id"] for r in card["representatives"]]
            assert got == central_sample(corpus["eset"], corpus["result"], j, 5)

    def test_unknown_session_and_cluster_404(self, server, corpus):
        base, _ = server
        status, body, _ = call(base, "GET", "/sessions/nope")
        assert status == 404 and body["code"] == "unknown_session"
        sid = start(base, corpus)["session_id"]
        status, body, _ = call(base, "GET", f"/sessions/{sid}/clusters/999")
        assert status == 404 and body["code"] == "unknown_cluster"

    def test_missing_artifact_404(self, server, corpus):
        base, _ = server
        status, body, _ = call(base, "POST", "/sessions", {
            "embeddings": "/does/not/exist.esf",
            "clustering": str(corpus["clustering"]),
            "label_map": corpus["label_map"].to_json_obj(),
        })
        assert status == 404 and body["code"] == "missing_artifact"

    def test_cors_headers_and_preflight(self, server, corpus):
        base, _ = server
        _, _, headers = call(base, "GET", "/sessions/nope")
        assert headers.get("Access-Control-Allow-Origin") == "*"
        req = urllib.request.Request(base + "/sessions", method="OPTIONS")
        with urllib.request.urlopen(req) as resp:
            assert resp.status == 204
            assert resp.headers["Access-Control-Allow-Methods"] == "GET, POST, OPTIONS"


class TestVerdicts:
    def test_decide_all_clusters_completes_session(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        for j in range(30):
            status, body, _ = call(base, "POST", f"/sessions/{sid}/clusters/{j}/verdict",
                                   {"decision": "tissue", "class_id": j % 3})
            assert status == 200
            assert body["remaining_pending"] == 29 - j
        status, summary, _ = call(base, "GET", f"/sessions/{sid}")
        assert summary["complete"] is True

    def test_unknown_class_rejected(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        status, body, _ = call(base, "POST", f"/sessions/{sid}/clusters/0/verdict",
                               {"decision": "tissue", "class_id": 99})
        assert status == 422 and body["code"] == "unknown_class"

    def test_double_decide_conflicts_unless_revised(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        url = f"/sessions/{sid}/clusters/3/verdict"
        assert call(base, "POST", url, {"decision": "drop"})[0] == 200
        status, body, _ = call(base, "POST", url, {"decision": "tissue", "class_id": 1})
        assert status == 409 and body["code"] == "conflict"
        status, _, _ = call(base, "POST", url,
                            {"decision": "tissue", "class_id": 1, "revise": True})
        assert status == 200

    def test_concurrent_verdicts_one_winner(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        url = f"/sessions/{sid}/clusters/5/verdict"
        results = []
        barrier = threading.Barrier(2)

        def worker(class_id):
            barrier.wait()
            results.append(call(base, "POST", url,
                                {"decision": "tissue", "class_id": class_id})[0])

        threads = [threading.Thread(target=worker, args=(c,)) for c in (0, 1)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == [200, 409]


class TestFinalize:
    def decide_all(self, base, sid, drop=()):
        for j in range(30):
            body = {"decision": "drop"} if j in drop else {"decision": "tissue", "class_id": j % 3}
            assert call(base, "POST", f"/sessions/{sid}/clusters/{j}/verdict", body)[0] == 200

    def test_finalize_matches_build_dictionary_bytes(self, server, corpus, tmp_path):
        base, service = server
        sid = start(base, corpus)["session_id"]
        self.decide_all(base, sid, drop={4, 9})
        status, body, _ = call(base, "POST", f"/sessions/{sid}/finalize")
        assert status == 200
        served = Path(body["dictionary_path"]).read_bytes()

        session = service.get_session(sid)
        verdicts = [session.verdicts[j] for j in range(30)]
        expected = build_dictionary(corpus["result"], verdicts, corpus["label_map"])
        from protomask.dictionary import save_dictionary

        ref = tmp_path / "ref.json"
        save_dictionary(expected, ref)
        assert served == ref.read_bytes()

    def test_finalize_incomplete_409(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        status, body, _ = call(base, "POST", f"/sessions/{sid}/finalize")
        assert status == 409 and body["code"] == "incomplete"

    def test_finalize_all_dropped_422(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        self.decide_all(base, sid, drop=set(range(30)))
        status, body, _ = call(base, "POST", f"/sessions/{sid}/finalize")
        assert status == 422 and body["code"] == "all_dropped"


class TestPersistence:
    def test_restart_reloads_identical_state(self, server, corpus, tmp_path):
        base, service = server
        sid = start(base, corpus, t=7, strategy="equidistant", seed=3)["session_id"]
        for j in range(12):
            call(base, "POST", f"/sessions/{sid}/clusters/{j}/verdict",
                 {"decision": "tissue", "class_id": j % 3})

        reloaded = LabelingService(service.data_dir)
        a, b = service.get_session(sid), reloaded.get_session(sid)
        assert a.summary() == b.summary()
        assert a.reps == b.reps
        assert {j: v.to_json_obj() for j, v in a.verdicts.items()} == {
            j: v.to_json_obj() for j, v in b.verdicts.items()
        }

    def test_finalized_flag_survives_restart(self, server, corpus):
        base, service = server
        sid = start(base, corpus)["session_id"]
        for j in range(30):
            call(base, "POST", f"/sessions/{sid}/clusters/{j}/verdict",
                 {"decision": "tissue", "class_id": 0})
        call(base, "POST", f"/sessions/{sid}/finalize")
        reloaded = LabelingService(service.data_dir)
        assert reloaded.get_session(sid).finalized is True


class TestThumbnails:
    def test_served_as_png(self, tmp_path):
        from protomask.pipeline import run_pipeline
        from test_pipeline_cli import small_config

        run = tmp_path / "run"
        run_pipeline(small_config(run, write_thumbnails=True, k=4))
        service = LabelingService(tmp_path / "data")
        httpd = make_server(service, port=0)
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{httpd.server_address[1]}"
        try:
            label_map = json.loads((run / "label_map.json").read_text())
            status, summary, _ = call(base, "POST", "/sessions", {
                "embeddings": str(run / "patches.esf"),
                "clustering": str(run / "clustering.json"),
                "label_map": label_map,
            })
            assert status == 201
            sid = summary["session_id"]
            url = f"{base}/sessions/{sid}/clusters/0/patches/0/thumbnail"
            with urllib.request.urlopen(url) as resp:
                payload = resp.read()
                assert resp.headers["Content-Type"] == "image/png"
            assert payload[:8] == b"\x89PNG\r\n\x1a\n"
            width = int.from_bytes(payload[16:20], "big")
            height = int.from_bytes(payload[20:24], "big")
            assert (width, height) == (64, 64)
        finally:
            httpd.shutdown()
            httpd.server_close()

    def test_missing_thumbnail_404(self, server, corpus):
        base, _ = server
        sid = start(base, corpus)["session_id"]
        status, body, _ = call(base, "GET", f"/sessions/{sid}/clusters/0/patches/0/thumbnail")
        assert status == 404 and body["code"] == "no_thumbnail"
