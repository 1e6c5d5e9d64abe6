"""HTTP service binding: REST admin/query routes plus the mounted OAI-PMH
endpoint at /oai. Mutating routes require the static API key header X-INO-Key.
"""

from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qsl, urlsplit

from .api import MetadataSpec, Repository, ResourceSpec
from .errors import (
    CardinalityViolation,
    ConfigError,
    DomainViolation,
    DuplicateId,
    HasDependents,
    InoError,
    InvalidObject,
    NotFound,
    QuerySyntaxError,
    RangeViolation,
    UnknownAgent,
    UnknownAggregation,
    UnknownMember,
    UnknownPredicate,
    UnknownResource,
)
from .model import ID_PREFIX, format_ts, local_id
from .oai import OaiProvider
from .ontology import OntologyRegistry

_STATUS_BY_ERROR = (
    (NotFound, 404),
    (DuplicateId, 409),
    (HasDependents, 409),
    ((UnknownAggregation, UnknownResource, UnknownAgent, UnknownMember), 422),
    ((DomainViolation, RangeViolation, CardinalityViolation, UnknownPredicate), 422),
    ((InvalidObject, QuerySyntaxError), 400),
)

DEFAULT_CONFIG = {
    "dataDir": "data",
    "port": "8080",
    "apiKey": "",
    "ontologyPath": "",
    "pageSize": "100",
}


def load_config(path) -> dict:
    config = dict(DEFAULT_CONFIG)
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        config[key] = value.strip()
    return config


class Service:
    """Owns the repository, the OAI provider, and their HTTP binding."""

    def __init__(self, config: dict, clock=None):
        ontology = None
        if config.get("ontologyPath"):
            ontology = OntologyRegistry.load(
                Path(config["ontologyPath"]).read_text()
            )
        self.repo = Repository(config["dataDir"], ontology=ontology, clock=clock)
        self.api_key = config.get("apiKey", "")
        self.provider = OaiProvider(self.repo,
                                    page_size=int(config.get("pageSize", "100")))
        self._cache_path = Path(config["dataDir"]) / "oai_cache.json"
        self._mutation_lock = threading.Lock()
        if self._cache_path.exists():
            self.provider.load_cache(self._cache_path)
            self.provider.catch_up()
        else:
            self.provider.rebuild_cache()
        self._server: ThreadingHTTPServer | None = None

    def close(self) -> None:
        self.provider.save_cache(self._cache_path)
        self.repo.close()

    # ------------------------------------------------------------- http glue

    def serve(self, port: int, host: str = "127.0.0.1") -> ThreadingHTTPServer:
        service = self

        class Handler(_Handler):
            pass

        Handler.service = service
        self._server = ThreadingHTTPServer((host, port), Handler)
        return self._server

    def serve_forever(self, port: int, host: str = "127.0.0.1") -> None:
        server = self.serve(port, host)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
            self.close()

    def _sync_provider(self) -> None:
        with self._mutation_lock:
            self.provider.catch_up()

    # -------------------------------------------------------------- handlers

    def handle(self, method: str, path: str, query: dict, body: bytes,
               headers) -> tuple[int, str, bytes]:
        parts = [p for p in path.split("/") if p]
        if path == "/oai":
            return 200, "text/xml", self.provider.handle_request(query)

        if method == "GET" and len(parts) == 2 and parts[0] == "objects":
            obj = self.repo.get_object(ID_PREFIX + parts[1])
            return 200, "application/json", _object_json(obj)
        if (method == "GET" and len(parts) == 4 and parts[0] == "objects"
                and parts[2] == "datastreams"):
            obj = self.repo.get_object(ID_PREFIX + parts[1])
            ds = obj.datastream(parts[3])
            if ds is None:
                raise NotFound(f"datastream {parts[3]}")
            if ds.is_surrogate:
                return 302, ds.surrogate, b""
            return 200, ds.media_type, ds.content
        if method == "GET" and len(parts) == 3 and parts[0] == "disseminations":
            data, media, path_kind = self.repo.get_dissemination(
                ID_PREFIX + parts[1], parts[2]
            )
            return 200, media, data
        if method == "POST" and path == "/query":
            rows = self.repo.query(body.decode("utf-8"))
            out = [
                {var: {"kind": term.kind, "value": term.value}
                 for var, term in row.items}
                for row in sorted(
                    rows,
                    key=lambda r: [(v, t.kind, t.value) for v, t in r.items],
                )
            ]
            return 200, "application/json", json.dumps({"rows": out}).encode()

        # mutating routes
        if method == "POST" and len(parts) == 2 and parts[0] == "objects":
            self._check_key(headers)
            oid = self._create_object(parts[1], json.loads(body or b"{}"))
            self._sync_provider()
            return 201, "application/json", json.dumps({"id": oid}).encode()
        if (method == "PUT" and len(parts) == 3 and parts[0] == "aggregations"
                and parts[2] == "members"):
            self._check_key(headers)
            members = {ID_PREFIX + m for m in json.loads(body)}
            delta = self.repo.set_aggregation_membership(
                ID_PREFIX + parts[1], members
            )
            self._sync_provider()
            return 200, "application/json", json.dumps(
                {"added": sorted(local_id(m) for m in delta.added),
                 "removed": sorted(local_id(m) for m in delta.removed)}
            ).encode()
        raise NotFound(path)

    def _check_key(self, headers) -> None:
        if self.api_key and headers.get("X-INO-Key") != self.api_key:
            raise PermissionError("bad or missing X-INO-Key")

    def _create_object(self, kind: str, body: dict) -> str:
        if kind == "agent":
            oid = self.repo.add_agent(body.get("name", ""), body.get("kind", ""))
        elif kind == "resource":
            oid = self.repo.add_resource(_resource_spec(body))
        elif kind == "metadata":
            payload = body.get("payload", "")
            if body.get("payloadEncoding") == "base64":
                payload = base64.b64decode(payload)
            else:
                payload = payload.encode("utf-8")
            oid = self.repo.add_metadata(
                MetadataSpec(
                    target=ID_PREFIX + body.get("target", ""),
                    format_id=body.get("formatId", ""),
                    payload=payload,
                    provider=ID_PREFIX + body.get("provider", ""),
                    initial_aggregations=frozenset(
                        ID_PREFIX + a for a in body.get("initialAggregations", [])
                    ),
                )
            )
        elif kind == "aggregation":
            oid = self.repo.create_aggregation(
                ID_PREFIX + body.get("agent", ""),
                _resource_spec(body.get("proxy", {})),
            )
        else:
            raise NotFound(f"object kind {kind!r}")
        return local_id(oid)


def _resource_spec(body: dict) -> ResourceSpec:
    content = body.get("content")
    if content is not None:
        content = base64.b64decode(content)
    return ResourceSpec(
        content_url=body.get("contentUrl"),
        content=content,
        media_type=body.get("mediaType"),
        initial_aggregations=frozenset(
            ID_PREFIX + a for a in body.get("initialAggregations", [])
        ),
    )


def _object_json(obj) -> bytes:
    streams = []
    for ds in obj.datastreams:
        d = {"dsId": ds.ds_id, "mediaType": ds.media_type}
        if ds.is_surrogate:
            d["surrogate"] = ds.surrogate
        else:
            d["contentBase64"] = base64.b64encode(ds.content).decode("ascii")
        streams.append(d)
    return json.dumps(
        {
            "id": local_id(obj.id),
            "types": list(obj.types),
            "state": obj.state,
            "created": format_ts(obj.created),
            "modified": format_ts(obj.modified),
            "seq": obj.seq,
            "datastreams": streams,
            "relationships": [
                {"predicate": t.predicate, "object": t.object.value,
                 "kind": t.object.kind}
                for t in obj.relationships
            ],
        }
    ).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    service: Service = None
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet test output
        pass

    def _dispatch(self, method: str):
        split = urlsplit(self.path)
        query = dict(parse_qsl(split.query))
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            status, media, data = self.service.handle(
                method, split.path, query, body, self.headers
            )
        except PermissionError as exc:
            self._send(403, "application/json",
                       json.dumps({"error": str(exc)}).encode())
            return
        except InoError as exc:
            self._send(_status_for(exc), "application/json",
                       json.dumps({"error": type(exc).__name__,
                                   "message": str(exc)}).encode())
            return
        except json.JSONDecodeError as exc:
            self._send(400, "application/json",
                       json.dumps({"error": f"bad JSON: {exc}"}).encode())
            return
        if status == 302:
            self.send_response(302)
            self.send_header("Location", media)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self._send(status, media, data)

    def _send(self, status, media, data):
        self.send_response(status)
        self.send_header("Content-Type", media)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        # OAI-PMH allows POST with form-encoded arguments
        if urlsplit(self.path).path == "/oai":
            length = int(self.headers.get("Content-Length") or 0)
            form = dict(parse_qsl(self.rfile.read(length).decode("utf-8")))
            data = self.service.provider.handle_request(form)
            self._send(200, "text/xml", data)
            return
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")


def _status_for(exc: InoError) -> int:
    for types, status in _STATUS_BY_ERROR:
        if isinstance(exc, types):
            return status
    return 500
