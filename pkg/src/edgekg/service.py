"""Local HTTP inference service over a frozen checkpoint.

Endpoints (JSON in, single-line JSON out, labels at the boundary):

    GET  /health              model kind, dim, table sizes
    POST /score               {"head": H, "relation": R, "tail": T}
                              -> {"score", "z", "flagged", "reason"}
    POST /complete            {"head": H, "relation": R, "k": N} or
                              {"relation": R, "tail": T, "k": N}
                              -> {"query", "candidates": [{entity, score, z}]}

The model is loaded once and never mutated; its arrays are marked
read-only as a tripwire. Screening uses a frozen reference distribution,
either loaded from a file or fit lazily on a trusted triple file the
first time a z value is needed. Unknown labels get a structured
out-of-vocabulary response, not an error.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .checkpoint import load
from .errors import ConfigError, KGEngineError, ParseError
from .models import EmbeddingModel, score, score_all_heads, score_all_tails
from .quality import REASON_LOW_Z, REASON_OOV, ScoreDistribution, fit_distribution, load_distribution, zscores
from .store import Dictionary, read_dictionary

log = logging.getLogger(__name__)


@dataclass
class RuntimeConfig:
    model_checkpoint_path: str
    entities_path: str
    relations_path: str
    reference_distribution_path: str | None = None
    trusted_data_path: str | None = None
    bind_address: str = "127.0.0.1:8080"
    max_batch: int = 1024
    top_k_default: int = 10
    pdqa_threshold: float = -1.0

    def validate(self) -> None:
        if self.max_batch < 1:
            raise ConfigError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.top_k_default < 1:
            raise ConfigError(f"top_k_default must be >= 1, got {self.top_k_default}")
        if ":" not in self.bind_address:
            raise ConfigError(f"bind_address must be host:port, got {self.bind_address!r}")

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.bind_address.rpartition(":")
        try:
            return host, int(port)
        except ValueError:
            raise ConfigError(f"bad port in bind_address {self.bind_address!r}") from None


def _read_trusted_triples(path, entities: Dictionary, relations: Dictionary) -> np.ndarray:
    """Encode a trusted label-triple TSV, skipping lines with unknown labels."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            if h in entities and t in entities and r in relations:
                rows.append((entities.forward[h], relations.forward[r], entities.forward[t]))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


class InferenceEngine:
    """Request-level logic shared by the HTTP layer and the CLI one-shots."""

    def __init__(self, config: RuntimeConfig):
        config.validate()
        self.config = config
        self.model, self.mask = load(config.model_checkpoint_path)
        for table in self.model.tables().values():
            table.flags.writeable = False
        self.entities = read_dictionary(config.entities_path)
        self.relations = read_dictionary(config.relations_path)
        if len(self.entities) != self.model.num_entities:
            raise ConfigError(
                f"entity dictionary has {len(self.entities)} labels, "
                f"model has {self.model.num_entities} rows")
        if len(self.relations) != self.model.num_relations:
            raise ConfigError(
                f"relation dictionary has {len(self.relations)} labels, "
                f"model has {self.model.num_relations} rows")
        self._cache: dict = {}
        self._reference: ScoreDistribution | None = None
        self._reference_lock = threading.Lock()
        if config.reference_distribution_path:
            self._reference = load_distribution(config.reference_distribution_path)

    def reference(self) -> ScoreDistribution | None:
        """The frozen screening distribution, fit on first use when lazy."""
        if self._reference is None and self.config.trusted_data_path:
            with self._reference_lock:
                if self._reference is None:
                    triples = _read_trusted_triples(
                        self.config.trusted_data_path, self.entities, self.relations)
                    if triples.shape[0] >= 2:
                        self._reference = fit_distribution(
                            score(self.model, triples).astype(np.float64))
                        log.info("fit reference distribution on %d trusted triples",
                                 triples.shape[0])
                    else:
                        log.warning("trusted data %r has %d usable triples; screening disabled",
                                    self.config.trusted_data_path, triples.shape[0])
        return self._reference

    def health(self) -> dict:
        return {
            "status": "ok",
            "kind": self.model.kind,
            "dim": self.model.dim,
            "entities": self.model.num_entities,
            "relations": self.model.num_relations,
            "masked": self.model.masked,
        }

    def _lookup(self, head, relation, tail):
        unknown = []
        if head not in self.entities:
            unknown.append(str(head))
        if relation not in self.relations:
            unknown.append(str(relation))
        if tail not in self.entities:
            unknown.append(str(tail))
        if unknown:
            return None, unknown
        return (self.entities.forward[head], self.relations.forward[relation],
                self.entities.forward[tail]), []

    def score_triple(self, head: str, relation: str, tail: str) -> dict:
        ids, unknown = self._lookup(head, relation, tail)
        if ids is None:
            return {"score": None, "z": None, "flagged": True,
                    "reason": REASON_OOV, "unknown": unknown}
        raw = float(score(self.model, np.asarray([ids], dtype=np.int64))[0])
        reference = self.reference()
        if reference is None:
            return {"score": raw, "z": None, "flagged": False, "reason": ""}
        z = float(zscores(raw, reference))
        flagged = z < self.config.pdqa_threshold
        return {"score": raw, "z": z, "flagged": flagged,
                "reason": REASON_LOW_Z if flagged else ""}

    def complete(self, head: str | None, relation: str, tail: str | None,
                 k: int | None = None) -> dict:
        if (head is None) == (tail is None):
            raise ConfigError("completion needs exactly one of head or tail")
        if k is None:
            k = self.config.top_k_default
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        k = min(k, self.config.max_batch, self.model.num_entities)

        anchor = head if head is not None else tail
        unknown = []
        if anchor not in self.entities:
            unknown.append(str(anchor))
        if relation not in self.relations:
            unknown.append(str(relation))
        if unknown:
            return {"query": [head, relation, tail], "candidates": [],
                    "reason": REASON_OOV, "unknown": unknown}

        rel_id = self.relations.forward[relation]
        if head is not None:
            scores = score_all_tails(self.model, self.entities.forward[head], rel_id,
                                     cache=self._cache)
        else:
            scores = score_all_heads(self.model, rel_id, self.entities.forward[tail],
                                     cache=self._cache)
        # stable top-k: argsort descending with index tie-break, then cut
        order = np.lexsort((np.arange(scores.shape[0]), -scores.astype(np.float64)))[:k]
        reference = self.reference()
        candidates = []
        for ent in order.tolist():
            raw = float(scores[ent])
            entry = {"entity": self.entities.reverse[ent], "score": raw,
                     "z": float(zscores(raw, reference)) if reference else None}
            candidates.append(entry)
        return {"query": [head, relation, tail], "candidates": candidates}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    engine: InferenceEngine  # assigned by make_server on the subclass

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _reply(self, code: int, payload: dict) -> None:
        body = (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, self.engine.health())
        else:
            self._reply(404, {"error": f"no such endpoint {self.path}"})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8") or "{}")
            if not isinstance(payload, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._reply(400, {"error": f"bad request body: {exc}"})
            return
        try:
            if self.path == "/score":
                missing = [key for key in ("head", "relation", "tail") if key not in payload]
                if missing:
                    self._reply(400, {"error": f"missing fields: {', '.join(missing)}"})
                    return
                self._reply(200, self.engine.score_triple(
                    str(payload["head"]), str(payload["relation"]), str(payload["tail"])))
            elif self.path == "/complete":
                if "relation" not in payload:
                    self._reply(400, {"error": "missing fields: relation"})
                    return
                head = payload.get("head")
                tail = payload.get("tail")
                k = payload.get("k")
                self._reply(200, self.engine.complete(
                    None if head is None else str(head),
                    str(payload["relation"]),
                    None if tail is None else str(tail),
                    None if k is None else int(k)))
            else:
                self._reply(404, {"error": f"no such endpoint {self.path}"})
        except KGEngineError as exc:
            self._reply(400, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - last-resort guard
            log.exception("request failed")
            self._reply(500, {"error": f"internal error: {exc}"})


def make_server(config: RuntimeConfig) -> tuple[ThreadingHTTPServer, InferenceEngine]:
    """Bind a server without starting it; port 0 picks a free port (tests)."""
    engine = InferenceEngine(config)
    handler = type("BoundHandler", (_Handler,), {"engine": engine})
    host, port = config.host_port()
    server = ThreadingHTTPServer((host, port), handler)
    return server, engine


def serve(config: RuntimeConfig) -> None:
    """Run the service until interrupted."""
    server, engine = make_server(config)
    health = engine.health()
    host, port = server.server_address[0], server.server_address[1]
    print(f"serving {health['kind']} (dim {health['dim']}, {health['entities']} entities) "
          f"on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
