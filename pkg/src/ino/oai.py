"""OAI-PMH 2.0 data provider over a materialized record cache.

The cache is batch-populated from conjunctive queries over the triple index
and maintained incrementally from the store's change-event feed; record
payloads are disseminated at response time, never stored.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import time
from dataclasses import dataclass, replace
from datetime import datetime
from xml.etree import ElementTree as ET

from .dissemination import OAI_DC_NS
from .errors import BadResumptionToken, EventOutOfOrder, FormatUnavailable, NotFound
from .index import ConjunctiveQuery, TriplePattern, Var
from .model import (
    MEMBER_OF,
    METADATA_FOR,
    OBJECT_TYPE,
    Term,
    format_ts,
    local_id,
    parse_ts,
    type_iri,
)
from .store import CREATED, MODIFIED, PURGED, ChangeEvent

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
OAI_SCHEMA = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"

REPOSITORY_NAME = "ino-repo"
IDENTIFIER_PREFIX = "oai:ndr.local:"
TOKEN_TTL_SECONDS = 3600

_FORMAT_NAMESPACES = {
    "oai_dc": (OAI_DC_NS, "http://www.openarchives.org/OAI/2.0/oai_dc.xsd"),
}

VERBS = {
    "Identify", "ListMetadataFormats", "ListSets",
    "ListIdentifiers", "ListRecords", "GetRecord",
}


@dataclass(frozen=True)
class OaiRecord:
    identifier: str
    format: str
    datestamp: datetime
    set_specs: frozenset[str]
    deleted: bool
    source_object: str


@dataclass(frozen=True)
class CacheStats:
    records: int
    elapsed: float


def encode_token(query_key: str, offset: int, epoch: int, expiry: int) -> str:
    raw = f"v1|{query_key}|{offset}|{epoch}|{expiry}".encode("ascii")
    return base64.urlsafe_b64encode(raw).decode("ascii")


def decode_token(token: str, current_epoch: int, now: float | None = None):
    try:
        raw = base64.urlsafe_b64decode(token.encode("ascii")).decode("ascii")
    except (binascii.Error, UnicodeError, ValueError) as exc:
        raise BadResumptionToken("malformed token") from exc
    parts = raw.split("|")
    if len(parts) != 5 or parts[0] != "v1":
        raise BadResumptionToken("malformed token")
    _, query_key, offset_s, epoch_s, expiry_s = parts
    try:
        offset, epoch, expiry = int(offset_s), int(epoch_s), int(expiry_s)
    except ValueError as exc:
        raise BadResumptionToken("malformed token") from exc
    if epoch != current_epoch:
        raise BadResumptionToken("stale cache epoch")
    if (now if now is not None else time.time()) > expiry:
        raise BadResumptionToken("token expired")
    return query_key, offset


class OaiProvider:
    def __init__(self, repo, page_size: int = 100,
                 base_url: str = "http://ndr.local/oai"):
        self.repo = repo
        self.page_size = page_size
        self.base_url = base_url
        self.records: dict[tuple[str, str], OaiRecord] = {}
        self.last_applied_seq = 0
        self.epoch = 1
        self._queries: dict[str, dict] = {}  # queryKey -> request args

    # ----------------------------------------------------------- cache build

    def _records_for(self, metadata_id: str) -> list[OaiRecord]:
        obj = self.repo.get_object(metadata_id)
        q = ConjunctiveQuery(
            (TriplePattern(Term.iri(metadata_id), Term.iri(MEMBER_OF), Var("?a")),),
            ("?a",),
        )
        sets = frozenset(
            local_id(row["?a"].value) for row in self.repo.query(q)
        )
        identifier = IDENTIFIER_PREFIX + local_id(metadata_id)
        return [
            OaiRecord(identifier, fmt, obj.modified, sets, False, metadata_id)
            for fmt in sorted(self.repo.list_formats(metadata_id))
        ]

    def rebuild_cache(self) -> CacheStats:
        """Re-derive all live records via graph queries; carry forward deleted
        records whose source object is no longer live; bump the epoch."""
        start = time.perf_counter()
        with self.repo._lock:
            q = ConjunctiveQuery(
                (
                    TriplePattern(Var("?m"), Term.iri(OBJECT_TYPE),
                                  Term.iri(type_iri("Metadata"))),
                    TriplePattern(Var("?m"), Term.iri(METADATA_FOR), Var("?r")),
                ),
                ("?m",),
            )
            fresh: dict[tuple[str, str], OaiRecord] = {}
            for row in self.repo.query(q):
                mid = row["?m"].value
                for rec in self._records_for(mid):
                    fresh[(rec.identifier, rec.format)] = rec
            for key, rec in self.records.items():
                if rec.deleted and not self.repo.store.exists(rec.source_object):
                    fresh.setdefault(key, rec)
            self.records = fresh
            self.last_applied_seq = self.repo.store.current_seq
        self.epoch += 1
        self._queries.clear()
        return CacheStats(len(self.records), time.perf_counter() - start)

    # ------------------------------------------------------------ incremental

    def apply_event(self, event: ChangeEvent) -> None:
        if event.seq != self.last_applied_seq + 1:
            raise EventOutOfOrder(
                f"expected seq {self.last_applied_seq + 1}, got {event.seq}"
            )
        if event.kind == PURGED:
            for key, rec in list(self.records.items()):
                if rec.source_object == event.object_id and not rec.deleted:
                    self.records[key] = replace(
                        rec, deleted=True, datestamp=event.timestamp
                    )
        elif event.kind in (CREATED, MODIFIED):
            obj = self.repo.get_object(event.object_id)
            if "Metadata" in obj.types:
                new = {(r.identifier, r.format): r
                       for r in self._records_for(event.object_id)}
                for key, rec in list(self.records.items()):
                    if rec.source_object == event.object_id and key not in new:
                        del self.records[key]
                self.records.update(new)
        self.last_applied_seq = event.seq

    def catch_up(self) -> int:
        """Apply any store events past the last applied seq."""
        applied = 0
        for ev in self.repo.changes_since(self.last_applied_seq):
            self.apply_event(ev)
            applied += 1
        return applied

    # ------------------------------------------------------- cache persistence

    def save_cache(self, path) -> None:
        data = {
            "lastAppliedSeq": self.last_applied_seq,
            "records": [
                {
                    "identifier": r.identifier,
                    "format": r.format,
                    "datestamp": format_ts(r.datestamp),
                    "setSpecs": sorted(r.set_specs),
                    "deleted": r.deleted,
                    "sourceObject": r.source_object,
                }
                for r in self.records.values()
            ],
        }
        path.write_text(json.dumps(data))

    def load_cache(self, path) -> None:
        data = json.loads(path.read_text())
        self.records = {}
        for d in data["records"]:
            rec = OaiRecord(
                d["identifier"], d["format"], parse_ts(d["datestamp"]),
                frozenset(d["setSpecs"]), d["deleted"], d["sourceObject"],
            )
            self.records[(rec.identifier, rec.format)] = rec
        self.last_applied_seq = data["lastAppliedSeq"]

    # --------------------------------------------------------------- requests

    def handle_request(self, params: dict[str, str]) -> bytes:
        verb = params.get("verb")
        try:
            if verb not in VERBS:
                return self._error_response(params, "badVerb",
                                            f"unknown verb {verb!r}")
            handler = getattr(self, "_verb_" + verb)
            return handler(dict(params))
        except _OaiError as exc:
            return self._error_response(params, exc.code, exc.message)

    # verb handlers ----------------------------------------------------------

    def _verb_Identify(self, params):
        self._reject_extra_args(params, set())
        live = [r for r in self.records.values()]
        earliest = min((r.datestamp for r in live), default=None)
        body = ET.Element("Identify")
        _text(body, "repositoryName", REPOSITORY_NAME)
        _text(body, "baseURL", self.base_url)
        _text(body, "protocolVersion", "2.0")
        _text(body, "adminEmail", "admin@ndr.local")
        _text(body, "earliestDatestamp",
              format_ts(earliest) if earliest else "1970-01-01T00:00:00Z")
        _text(body, "deletedRecord", "persistent")
        _text(body, "granularity", "YYYY-MM-DDThh:mm:ssZ")
        return self._respond(params, body)

    def _verb_ListMetadataFormats(self, params):
        self._reject_extra_args(params, {"identifier"})
        identifier = params.get("identifier")
        if identifier is not None:
            formats = sorted(
                r.format for r in self.records.values()
                if r.identifier == identifier
            )
            if not formats:
                raise _OaiError("idDoesNotExist", identifier)
        else:
            formats = sorted({r.format for r in self.records.values()})
        body = ET.Element("ListMetadataFormats")
        for f in formats:
            ns, schema = _FORMAT_NAMESPACES.get(
                f, (f"http://ndr.local/format/{f}#",
                    f"http://ndr.local/format/{f}.xsd"))
            mf = ET.SubElement(body, "metadataFormat")
            _text(mf, "metadataPrefix", f)
            _text(mf, "schema", schema)
            _text(mf, "metadataNamespace", ns)
        return self._respond(params, body)

    def _verb_ListSets(self, params):
        self._reject_extra_args(params, {"resumptionToken"})
        body = ET.Element("ListSets")
        q = ConjunctiveQuery(
            (TriplePattern(Var("?a"), Term.iri(OBJECT_TYPE),
                           Term.iri(type_iri("Aggregation"))),),
            ("?a",),
        )
        aggs = sorted(row["?a"].value for row in self.repo.query(q))
        for agg in aggs:
            name = agg
            try:
                obj = self.repo.get_object(agg)
                for t in obj.relationships:
                    if t.predicate.endswith("representedBy"):
                        proxy = self.repo.get_object(t.object.value)
                        ds = proxy.datastream("content")
                        if ds is not None and ds.is_surrogate:
                            name = ds.surrogate
            except NotFound:
                pass
            s = ET.SubElement(body, "set")
            _text(s, "setSpec", local_id(agg))
            _text(s, "setName", name)
        return self._respond(params, body)

    def _verb_GetRecord(self, params):
        self._reject_extra_args(params, {"identifier", "metadataPrefix"},
                                required={"identifier", "metadataPrefix"})
        identifier = params["identifier"]
        prefix = params["metadataPrefix"]
        known = [r for r in self.records.values() if r.identifier == identifier]
        if not known:
            raise _OaiError("idDoesNotExist", identifier)
        rec = self.records.get((identifier, prefix))
        if rec is None:
            raise _OaiError("cannotDisseminateFormat", prefix)
        body = ET.Element("GetRecord")
        body.append(self._record_element(rec, with_metadata=True))
        return self._respond(params, body)

    def _verb_ListIdentifiers(self, params):
        return self._list_verb(params, "ListIdentifiers", with_metadata=False)

    def _verb_ListRecords(self, params):
        return self._list_verb(params, "ListRecords", with_metadata=True)

    # list machinery ---------------------------------------------------------

    def select(self, fmt: str, set_spec: str | None = None,
               from_ts: datetime | None = None,
               until_ts: datetime | None = None) -> list[OaiRecord]:
        """Stable (datestamp, identifier)-ordered selection over the cache."""
        out = []
        for rec in self.records.values():
            if rec.format != fmt:
                continue
            if set_spec is not None and set_spec not in rec.set_specs:
                continue
            if from_ts is not None and rec.datestamp < from_ts:
                continue
            if until_ts is not None and rec.datestamp > until_ts:
                continue
            out.append(rec)
        out.sort(key=lambda r: (r.datestamp, r.identifier))
        return out

    def _list_verb(self, params, verb, with_metadata):
        token = params.get("resumptionToken")
        if token is not None:
            if set(params) - {"verb", "resumptionToken"}:
                raise _OaiError("badArgument",
                                "resumptionToken is an exclusive argument")
            query_key, offset = self._decode_or_error(token)
            args = self._queries.get(query_key)
            if args is None:
                raise _OaiError("badResumptionToken", "unknown query key")
        else:
            self._reject_extra_args(
                params, {"metadataPrefix", "set", "from", "until"},
                required={"metadataPrefix"},
            )
            args = {
                "metadataPrefix": params["metadataPrefix"],
                "set": params.get("set"),
                "from": params.get("from"),
                "until": params.get("until"),
            }
            offset = 0

        fmt = args["metadataPrefix"]
        if fmt not in {r.format for r in self.records.values()}:
            raise _OaiError("cannotDisseminateFormat", fmt)
        from_ts = self._parse_date_arg(args.get("from"))
        until_ts = self._parse_date_arg(args.get("until"))
        selection = self.select(fmt, args.get("set"), from_ts, until_ts)
        if not selection:
            raise _OaiError("noRecordsMatch", "empty selection")
        page = selection[offset : offset + self.page_size]
        if not page and offset > 0:
            raise _OaiError("badResumptionToken", "offset beyond result list")

        body = ET.Element(verb)
        for rec in page:
            if with_metadata:
                body.append(self._record_element(rec, with_metadata=True))
            else:
                body.append(self._header_element(rec))

        next_offset = offset + len(page)
        query_key = hashlib.sha256(
            json.dumps([verb, fmt, args.get("set"), args.get("from"),
                        args.get("until")]).encode()
        ).hexdigest()[:16]
        if next_offset < len(selection):
            self._queries[query_key] = args
            tok = encode_token(query_key, next_offset, self.epoch,
                               int(time.time()) + TOKEN_TTL_SECONDS)
            rt = ET.SubElement(body, "resumptionToken",
                               completeListSize=str(len(selection)),
                               cursor=str(offset))
            rt.text = tok
        elif token is not None:
            ET.SubElement(body, "resumptionToken",
                          completeListSize=str(len(selection)),
                          cursor=str(offset))
        return self._respond(params, body)

    def _decode_or_error(self, token):
        try:
            return decode_token(token, self.epoch)
        except BadResumptionToken as exc:
            raise _OaiError("badResumptionToken", str(exc)) from exc

    @staticmethod
    def _parse_date_arg(value):
        if value is None:
            return None
        try:
            return parse_ts(value)
        except ValueError as exc:
            raise _OaiError("badArgument", f"bad datestamp {value!r}") from exc

    # element builders -------------------------------------------------------

    def _header_element(self, rec: OaiRecord) -> ET.Element:
        header = ET.Element("header")
        if rec.deleted:
            header.set("status", "deleted")
        _text(header, "identifier", rec.identifier)
        _text(header, "datestamp", format_ts(rec.datestamp))
        for s in sorted(rec.set_specs):
            _text(header, "setSpec", s)
        return header

    def _record_element(self, rec: OaiRecord, with_metadata: bool) -> ET.Element:
        record = ET.Element("record")
        record.append(self._header_element(rec))
        if with_metadata and not rec.deleted:
            try:
                payload, _media, _path = self.repo.get_dissemination(
                    rec.source_object, rec.format
                )
            except (NotFound, FormatUnavailable) as exc:
                raise _OaiError("cannotDisseminateFormat", str(exc)) from exc
            metadata = ET.SubElement(record, "metadata")
            metadata.append(ET.fromstring(payload))
        return record

    # response plumbing ------------------------------------------------------

    def _reject_extra_args(self, params, allowed: set, required: set = frozenset()):
        extra = set(params) - allowed - {"verb"}
        if extra:
            raise _OaiError("badArgument", f"illegal arguments {sorted(extra)}")
        missing = required - set(params)
        if missing:
            raise _OaiError("badArgument", f"missing arguments {sorted(missing)}")

    def _envelope(self, params, include_attrs=True) -> ET.Element:
        root = ET.Element("OAI-PMH", xmlns=OAI_NS)
        root.set("xmlns:xsi", XSI_NS)
        root.set("xsi:schemaLocation", f"{OAI_NS} {OAI_SCHEMA}")
        _text(root, "responseDate", format_ts(self.repo.store.clock.now()))
        request = ET.SubElement(root, "request")
        if include_attrs:
            for k, v in params.items():
                request.set(k, v)
        request.text = self.base_url
        return root

    def _respond(self, params, body: ET.Element) -> bytes:
        root = self._envelope(params)
        root.append(body)
        return _serialize(root)

    def _error_response(self, params, code, message) -> bytes:
        # badVerb/badArgument responses must not echo illegal request attrs
        root = self._envelope(params,
                              include_attrs=code not in ("badVerb", "badArgument"))
        err = ET.SubElement(root, "error", code=code)
        err.text = message
        return _serialize(root)


class _OaiError(Exception):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def _text(parent, tag, value):
    el = ET.SubElement(parent, tag)
    el.text = value
    return el


def _serialize(root: ET.Element) -> bytes:
    return b'<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(
        root, encoding="unicode"
    ).encode("utf-8")
