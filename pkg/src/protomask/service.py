"""HTTP session server for human cluster labeling.

Each session shows a clustering's representative patches and records
tissue/drop verdicts until every cluster is decided, then finalizes into a
prototype dictionary. Persistence is an append-only JSON-lines event log
per session, replayed on startup, so a crashed or restarted server resumes
with identical state. Verdicts are write-once unless the request sets
"revise". All endpoints speak JSON; errors are {code, message}.
"""

from __future__ import annotations

import json
import re
import struct
import threading
import zlib
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import dictionary as dictmod
from .cluster import ClusteringResult, load_clustering
from .errors import FormatError, ProtomaskError, ValidationError
from .formats import PatchEmbeddingSet, read_embedding_set, read_ppm
from .labels import TissueLabelMap


class ApiError(ProtomaskError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


@dataclass
class LabelingSession:
    session_id: str
    embeddings_path: str
    clustering_path: str
    label_map: TissueLabelMap
    t: int
    strategy: str
    rng_seed: int
    eset: PatchEmbeddingSet
    clustering: ClusteringResult
    reps: dict[int, list[int]]
    verdicts: dict[int, dictmod.ClusterVerdict] = field(default_factory=dict)
    finalized: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def k(self) -> int:
        return self.clustering.k

    def pending(self) -> list[int]:
        return [j for j in range(self.k) if j not in self.verdicts]

    def complete(self) -> bool:
        return len(self.verdicts) == self.k

    def summary(self) -> dict:
        return {
            "session_id": self.session_id,
            "k": self.k,
            "t": self.t,
            "strategy": self.strategy,
            "label_map": self.label_map.to_json_obj(),
            "decided": len(self.verdicts),
            "pending": self.k - len(self.verdicts),
            "complete": self.complete(),
            "finalized": self.finalized,
        }

    def cluster_card(self, index: int) -> dict:
        if not 0 <= index < self.k:
            raise ApiError(404, "unknown_cluster", f"no cluster {index}")
        verdict = self.verdicts.get(index)
        return {
            "cluster_index": index,
            "size": int(self.clustering.cluster_sizes[index]),
            "status": "decided" if verdict else "pending",
            "verdict": verdict.to_json_obj() if verdict else None,
            "representatives": [
                {
                    "patch_id": pid,
                    "thumbnail_url": f"/sessions/{self.session_id}/clusters/{index}/patches/{i}/thumbnail",
                }
                for i, pid in enumerate(self.reps[index])
            ],
        }


def _compute_reps(session: LabelingSession) -> dict[int, list[int]]:
    return dictmod.sample_representatives(session.eset, session.clustering,
                                          session.strategy, session.t, session.rng_seed)


def png_encode(rgb: np.ndarray) -> bytes:
    """Minimal PNG writer: 8-bit RGB, no interlace, one IDAT."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    raw = b"".join(b"\x00" + rgb[y].tobytes() for y in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header)
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


class LabelingService:
    """Session store with event-log persistence under data_dir/sessions."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, LabelingSession] = {}
        self._create_lock = threading.Lock()
        for event_log in sorted(self.sessions_dir.glob("*/events.jsonl")):
            session = self._replay(event_log)
            self.sessions[session.session_id] = session

    # ---- persistence -------------------------------------------------

    def _log_path(self, session_id: str) -> Path:
        return self.sessions_dir / session_id / "events.jsonl"

    def _append_event(self, session_id: str, event: dict) -> None:
        path = self._log_path(session_id)
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self, event_log: Path) -> LabelingSession:
        session: LabelingSession | None = None
        with open(event_log, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                if event["type"] == "created":
                    session = self._materialize(event)
                elif event["type"] == "verdict":
                    assert session is not None
                    v = dictmod.ClusterVerdict.from_json_obj(event["verdict"])
                    session.verdicts[v.cluster_index] = v
                elif event["type"] == "finalized":
                    assert session is not None
                    session.finalized = True
        if session is None:
            raise FormatError(f"{event_log}: no created event")
        return session

    def _materialize(self, event: dict) -> LabelingSession:
        eset = read_embedding_set(event["embeddings"])
        clustering = load_clustering(event["clustering"])
        session = LabelingSession(
            session_id=event["session_id"],
            embeddings_path=event["embeddings"],
            clustering_path=event["clustering"],
            label_map=TissueLabelMap.from_json_obj(event["label_map"]),
            t=int(event["t"]),
            strategy=event["strategy"],
            rng_seed=int(event["rng_seed"]),
            eset=eset,
            clustering=clustering,
            reps={},
        )
        session.reps = _compute_reps(session)
        return session

    # ---- operations ----------------------------------------------------

    def start_session(self, body: dict) -> dict:
        for key in ("embeddings", "clustering"):
            if key not in body:
                raise ApiError(400, "bad_request", f"missing field {key!r}")
            if not Path(body[key]).exists():
                raise ApiError(404, "missing_artifact", f"no file {body[key]}")
        if "label_map" in body:
            label_map_obj = body["label_map"]
        elif "label_map_path" in body:
            with open(body["label_map_path"], encoding="utf-8") as fh:
                label_map_obj = json.load(fh)
        else:
            raise ApiError(400, "bad_request", "need label_map or label_map_path")

        with self._create_lock:
            n = len(self.sessions) + 1
            while f"session-{n:04d}" in self.sessions:
                n += 1
            session_id = f"session-{n:04d}"
            event = {
                "type": "created",
                "session_id": session_id,
                "embeddings": str(body["embeddings"]),
                "clustering": str(body["clustering"]),
                "label_map": label_map_obj,
                "t": int(body.get("t", dictmod.DEFAULT_T)),
                "strategy": body.get("strategy", "central"),
                "rng_seed": int(body.get("seed", 0)),
            }
            try:
                session = self._materialize(event)
            except (ProtomaskError, OSError) as e:
                raise ApiError(422, "bad_artifact", str(e)) from e
            (self.sessions_dir / session_id).mkdir(parents=True)
            self._append_event(session_id, event)
            self.sessions[session_id] = session
        return session.summary()

    def get_session(self, session_id: str) -> LabelingSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id}")
        return session

    def post_verdict(self, session_id: str, cluster_index: int, body: dict) -> dict:
        session = self.get_session(session_id)
        decision = body.get("decision")
        if decision not in (dictmod.DECISION_TISSUE, dictmod.DECISION_DROP):
            raise ApiError(400, "bad_request", "decision must be 'tissue' or 'drop'")
        class_id = body.get("class_id")
        if decision == dictmod.DECISION_TISSUE:
            if class_id is None:
                raise ApiError(400, "bad_request", "tissue verdict needs class_id")
            if int(class_id) not in session.label_map.class_ids():
                raise ApiError(422, "unknown_class", f"class_id {class_id} not in label map")
        if not 0 <= cluster_index < session.k:
            raise ApiError(404, "unknown_cluster", f"no cluster {cluster_index}")

        with session.lock:
            if session.finalized:
                raise ApiError(409, "finalized", "session is already finalized")
            if cluster_index in session.verdicts and not body.get("revise", False):
                raise ApiError(409, "conflict",
                               f"cluster {cluster_index} already decided (set revise to override)")
            verdict = dictmod.ClusterVerdict(
                cluster_index=cluster_index,
                decision=decision,
                class_id=None if class_id is None else int(class_id),
                decided_by="human",
                inspected_patch_ids=list(session.reps[cluster_index]),
            )
            session.verdicts[cluster_index] = verdict
            self._append_event(session_id, {"type": "verdict", "verdict": verdict.to_json_obj()})
            remaining = session.k - len(session.verdicts)
        return {"status": "decided", "cluster_index": cluster_index,
                "remaining_pending": remaining, "complete": remaining == 0}

    def finalize(self, session_id: str) -> dict:
        session = self.get_session(session_id)
        with session.lock:
            if not session.complete():
                raise ApiError(409, "incomplete",
                               f"{len(session.pending())} clusters still pending")
            verdicts = [session.verdicts[j] for j in range(session.k)]
            try:
                dictionary = dictmod.build_dictionary(session.clustering, verdicts,
                                                      session.label_map)
            except ValidationError as e:
                raise ApiError(422, "all_dropped", str(e)) from e
            out_path = self.sessions_dir / session_id / "dictionary.json"
            dictmod.save_dictionary(dictionary, out_path)
            if not session.finalized:
                self._append_event(session_id, {"type": "finalized"})
                session.finalized = True
        with open(out_path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return {"session_id": session_id, "dictionary_path": str(out_path), "dictionary": obj}

    def thumbnail(self, session_id: str, cluster_index: int, rep_index: int) -> bytes:
        session = self.get_session(session_id)
        if not 0 <= cluster_index < session.k:
            raise ApiError(404, "unknown_cluster", f"no cluster {cluster_index}")
        reps = session.reps[cluster_index]
        if not 0 <= rep_index < len(reps):
            raise ApiError(404, "unknown_patch", f"no representative {rep_index}")
        record = next(r for r in session.eset.records if r.patch_id == reps[rep_index])
        if record.thumbnail_ref is None:
            raise ApiError(404, "no_thumbnail", f"patch {record.patch_id} has no thumbnail")
        base = Path(session.embeddings_path).resolve().parent
        try:
            pixels = read_ppm(base / record.thumbnail_ref)
        except (OSError, FormatError) as e:
            raise ApiError(404, "no_thumbnail", str(e)) from e
        return png_encode(pixels)


ROUTES = [
    ("POST", re.compile(r"^/sessions$"), "create"),
    ("GET", re.compile(r"^/sessions/([^/]+)$"), "summary"),
    ("GET", re.compile(r"^/sessions/([^/]+)/clusters$"), "clusters"),
    ("GET", re.compile(r"^/sessions/([^/]+)/clusters/(\d+)$"), "cluster"),
    ("GET", re.compile(r"^/sessions/([^/]+)/clusters/(\d+)/patches/(\d+)/thumbnail$"), "thumbnail"),
    ("POST", re.compile(r"^/sessions/([^/]+)/clusters/(\d+)/verdict$"), "verdict"),
    ("POST", re.compile(r"^/sessions/([^/]+)/finalize$"), "finalize"),
]


class _Handler(BaseHTTPRequestHandler):
    service: LabelingService  # assigned by make_server

    # ---- plumbing ------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _send_json(self, status: int, obj) -> None:
        payload = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_png(self, payload: bytes) -> None:
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length))
        except json.JSONDecodeError as e:
            raise ApiError(400, "bad_json", str(e)) from e

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.end_headers()

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")

    # ---- dispatch --------------------------------------------------------

    def _route(self, method: str) -> None:
        try:
            for m, pattern, name in ROUTES:
                if m != method:
                    continue
                match = pattern.match(self.path)
                if match:
                    self._dispatch(name, match.groups())
                    return
            raise ApiError(404, "not_found", f"no route {method} {self.path}")
        except ApiError as e:
            self._send_json(e.status, {"code": e.code, "message": str(e)})
        except ProtomaskError as e:
            self._send_json(422, {"code": "invalid", "message": str(e)})
        except Exception as e:  # noqa: BLE001 - a handler must never crash the server
            self._send_json(500, {"code": "internal", "message": str(e)})

    def _dispatch(self, name: str, groups: tuple) -> None:
        svc = self.service
        if name == "create":
            self._send_json(201, svc.start_session(self._read_body()))
        elif name == "summary":
            self._send_json(200, svc.get_session(groups[0]).summary())
        elif name == "clusters":
            session = svc.get_session(groups[0])
            self._send_json(200, {
                "session_id": session.session_id,
                "clusters": [session.cluster_card(j) for j in range(session.k)],
            })
        elif name == "cluster":
            session = svc.get_session(groups[0])
            self._send_json(200, session.cluster_card(int(groups[1])))
        elif name == "thumbnail":
            self._send_png(svc.thumbnail(groups[0], int(groups[1]), int(groups[2])))
        elif name == "verdict":
            self._send_json(200, svc.post_verdict(groups[0], int(groups[1]), self._read_body()))
        elif name == "finalize":
            self._send_json(200, svc.finalize(groups[0]))


def make_server(service: LabelingService, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def run_server(service: LabelingService, host: str = "127.0.0.1", port: int = 8765) -> None:
    server = make_server(service, host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
