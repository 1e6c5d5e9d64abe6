"""OAI-PMH 2.0 harvester client: ingests an external provider's records into
the repository through the high-level API, following resumption tokens.

Each harvested record maps to addResource (first http(s) dc:identifier) plus
addMetadata; provenance triples (sourceRecordId, sourceBaseUrl, sourceSet)
make re-harvests idempotent.
"""

from __future__ import annotations

import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET

from .api import MetadataSpec, Repository, ResourceSpec
from .errors import InoError, RemoteProtocolError
from .index import TriplePattern, Var
from .model import (
    SOURCE_BASE_URL,
    SOURCE_RECORD_ID,
    SOURCE_SET,
    Term,
)
from .oai import OAI_NS

_BENIGN_ERRORS = {"noRecordsMatch"}


@dataclass
class IngestStats:
    records: int = 0
    created_resources: int = 0
    created_metadata: int = 0
    updated: int = 0
    unchanged: int = 0
    skipped: int = 0
    failures: list[str] = field(default_factory=list)


def _q(tag: str) -> str:
    return f"{{{OAI_NS}}}{tag}"


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[1] if tag.startswith("{") else tag


class Harvester:
    def __init__(self, repo: Repository, fetch=None):
        self.repo = repo
        # fetch(url) -> bytes; injectable for tests and loopback harvests
        self._fetch = fetch or self._http_fetch

    @staticmethod
    def _http_fetch(url: str) -> bytes:
        with urllib.request.urlopen(url, timeout=60) as resp:
            return resp.read()

    def harvest(self, base_url: str, metadata_prefix: str,
                set_spec: str | None = None,
                from_ts: str | None = None) -> IngestStats:
        stats = IngestStats()
        agent = self._source_agent(base_url)
        agg = self._source_aggregation(base_url, set_spec)

        params = {"verb": "ListRecords", "metadataPrefix": metadata_prefix}
        if set_spec:
            params["set"] = set_spec
        if from_ts:
            params["from"] = from_ts
        while True:
            url = base_url + "?" + urllib.parse.urlencode(params)
            root = self._request(url, "ListRecords")
            if root is None:  # noRecordsMatch
                break
            list_el = root.find(_q("ListRecords"))
            if list_el is None:
                raise RemoteProtocolError("ListRecords: missing result element")
            for record in list_el.findall(_q("record")):
                self._ingest_record(record, metadata_prefix, agent, agg, stats)
            token_el = list_el.find(_q("resumptionToken"))
            if token_el is None or not (token_el.text or "").strip():
                break
            params = {"verb": "ListRecords",
                      "resumptionToken": token_el.text.strip()}
        return stats

    # ------------------------------------------------------------- internals

    def _request(self, url: str, verb: str):
        try:
            data = self._fetch(url)
        except OSError as exc:
            raise RemoteProtocolError(f"{verb}: transport failure: {exc}") from exc
        try:
            root = ET.fromstring(data)
        except ET.ParseError as exc:
            raise RemoteProtocolError(f"{verb}: unparseable response") from exc
        error = root.find(_q("error"))
        if error is not None:
            code = error.get("code", "unknown")
            if code in _BENIGN_ERRORS:
                return None
            raise RemoteProtocolError(f"{verb}: OAI error {code}")
        return root

    def _ingest_record(self, record, metadata_prefix, agent, agg, stats):
        stats.records += 1
        header = record.find(_q("header"))
        if header is None:
            stats.failures.append("record without header")
            return
        if header.get("status") == "deleted":
            stats.skipped += 1
            return
        oai_id = (header.findtext(_q("identifier")) or "").strip()
        metadata_el = record.find(_q("metadata"))
        if metadata_el is None or len(metadata_el) == 0:
            stats.skipped += 1
            return
        payload_root = metadata_el[0]
        payload = ET.tostring(payload_root, encoding="unicode").encode("utf-8")

        content_url = self._first_http_identifier(payload_root)
        if content_url is None:
            stats.skipped += 1
            return
        try:
            existing = self._find_metadata(oai_id)
            if existing is not None:
                current = self.repo.get_dissemination(existing, metadata_prefix)[0]
                if current == payload:
                    stats.unchanged += 1
                else:
                    self.repo.update_metadata_payload(existing, metadata_prefix,
                                                      payload)
                    stats.updated += 1
                return
            before = self.repo.store.count()
            resource = self.repo.add_resource(
                ResourceSpec(content_url=content_url,
                             initial_aggregations=frozenset({agg}))
            )
            if self.repo.store.count() > before:
                stats.created_resources += 1
            self.repo.add_metadata(
                MetadataSpec(
                    target=resource,
                    format_id=metadata_prefix,
                    payload=payload,
                    provider=agent,
                    initial_aggregations=frozenset({agg}),
                ),
                extra_relationships=[(SOURCE_RECORD_ID, Term.literal(oai_id))],
            )
            stats.created_metadata += 1
        except InoError as exc:
            stats.failures.append(f"{oai_id}: {exc}")

    @staticmethod
    def _first_http_identifier(payload_root) -> str | None:
        for el in payload_root.iter():
            if _localname(el.tag) == "identifier":
                text = (el.text or "").strip()
                if text.startswith(("http://", "https://")):
                    return text
        return None

    def _find_metadata(self, oai_id: str) -> str | None:
        hits = self.repo.match(
            TriplePattern(Var("?m"), Term.iri(SOURCE_RECORD_ID),
                          Term.literal(oai_id))
        )
        for t in hits:
            if self.repo.store.exists(t.subject):
                return t.subject
        return None

    def _source_agent(self, base_url: str) -> str:
        hits = self.repo.match(
            TriplePattern(Var("?a"), Term.iri(SOURCE_BASE_URL),
                          Term.literal(base_url))
        )
        for t in hits:
            if self.repo.store.exists(t.subject):
                return t.subject
        agent = self.repo.add_agent(base_url, "Service")
        self.repo.add_relationship(agent, SOURCE_BASE_URL,
                                   Term.literal(base_url))
        return agent

    def _source_aggregation(self, base_url: str, set_spec: str | None) -> str:
        key = f"{base_url}|{set_spec or ''}"
        hits = self.repo.match(
            TriplePattern(Var("?a"), Term.iri(SOURCE_SET), Term.literal(key))
        )
        for t in hits:
            if self.repo.store.exists(t.subject):
                return t.subject
        agent = self._source_agent(base_url)
        agg = self.repo.create_aggregation(
            agent, ResourceSpec(content_url=base_url)
        )
        self.repo.add_relationship(agg, SOURCE_SET, Term.literal(key))
        return agg
