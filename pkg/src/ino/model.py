"""Core domain types: digital objects, datastreams, triples, canonical XML.

Objects serialize to a canonical XML document (UTF-8, LF, fixed element and
attribute order) so that serialize(deserialize(serialize(o))) is the identity
on bytes. The commit sequence number is store bookkeeping derived from the
event log and is deliberately kept out of the XML and out of value equality.
"""

from __future__ import annotations

import base64
import hashlib
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

from .errors import InvalidObject, ParseError

# Namespace for system predicates and built-in relationship types.
INO_NS = "info:ino/def#"

OBJECT_TYPE = INO_NS + "objectType"
CREATED_DATE = INO_NS + "createdDate"
MODIFIED_DATE = INO_NS + "modifiedDate"
STATE = INO_NS + "state"
HAS_DATASTREAM = INO_NS + "hasDatastream"
MEDIA_TYPE = INO_NS + "mediaType"
LOCATION = INO_NS + "location"

MEMBER_OF = INO_NS + "memberOf"
METADATA_FOR = INO_NS + "metadataFor"
REPRESENTED_BY = INO_NS + "representedBy"
AGGREGATOR_FOR = INO_NS + "aggregatorFor"
PROVIDED_BY = INO_NS + "providedBy"
SOURCE_RECORD_ID = INO_NS + "sourceRecordId"
SOURCE_BASE_URL = INO_NS + "sourceBaseUrl"
SOURCE_SET = INO_NS + "sourceSet"

ID_PREFIX = "info:ino/"
_LOCAL_ID_RE = re.compile(r"[a-z0-9._-]{1,64}$")
_DS_ID_RE = re.compile(r"[a-zA-Z0-9_]{1,32}$")

ACTIVE = "Active"
DELETED = "Deleted"


def is_valid_object_id(value: str) -> bool:
    return (
        isinstance(value, str)
        and value.startswith(ID_PREFIX)
        and bool(_LOCAL_ID_RE.match(value[len(ID_PREFIX):]))
    )


def local_id(object_id: str) -> str:
    return object_id[len(ID_PREFIX):]


def type_iri(name: str) -> str:
    return INO_NS + name


def shard_path(object_id: str) -> str:
    """Relative file path for an object: objects/<h0h1>/<h2h3>/<local>.xml."""
    if not is_valid_object_id(object_id):
        raise InvalidObject(f"id: not a valid object IRI: {object_id!r}")
    digest = hashlib.sha256(object_id.encode("utf-8")).hexdigest()
    return f"objects/{digest[0:2]}/{digest[2:4]}/{local_id(object_id)}.xml"


def utcnow_seconds() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(text: str) -> datetime:
    try:
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(
            tzinfo=timezone.utc
        )
    except ValueError as exc:
        raise ValueError(f"bad timestamp {text!r}") from exc


class Clock:
    """Wall clock, truncated to whole seconds UTC."""

    def now(self) -> datetime:
        return utcnow_seconds()


class VirtualClock(Clock):
    """Deterministic clock for tests and corpus generation; ticks per call."""

    EPOCH = datetime(2006, 1, 1, tzinfo=timezone.utc)

    def __init__(self, start: datetime | None = None, step_seconds: int = 1):
        self._current = (start or self.EPOCH).replace(microsecond=0)
        self._step = step_seconds
        self._first = True

    def now(self) -> datetime:
        if self._first:
            self._first = False
            return self._current
        from datetime import timedelta

        self._current += timedelta(seconds=self._step)
        return self._current


@dataclass(frozen=True)
class Term:
    """An IRI or a literal. Equal bytes in different kinds are different terms."""

    kind: str  # "iri" | "literal"
    value: str

    @staticmethod
    def iri(value: str) -> "Term":
        return Term("iri", value)

    @staticmethod
    def literal(value: str) -> "Term":
        return Term("literal", value)

    @property
    def is_iri(self) -> bool:
        return self.kind == "iri"


@dataclass(frozen=True)
class Triple:
    subject: str  # IRI
    predicate: str  # IRI
    object: Term


@dataclass(frozen=True)
class Datastream:
    ds_id: str
    media_type: str
    content: bytes | None = None  # inline bytes
    surrogate: str | None = None  # absolute http(s) URL

    @property
    def is_surrogate(self) -> bool:
        return self.surrogate is not None


_URL_RE = re.compile(r"https?://[^\s]+$")


@dataclass(frozen=True)
class DigitalObject:
    id: str
    types: tuple[str, ...]
    created: datetime
    modified: datetime
    state: str = ACTIVE
    datastreams: tuple[Datastream, ...] = ()
    relationships: tuple[Triple, ...] = ()
    seq: int = field(default=0, compare=False)

    def datastream(self, ds_id: str) -> Datastream | None:
        for ds in self.datastreams:
            if ds.ds_id == ds_id:
                return ds
        return None

    def with_seq(self, seq: int) -> "DigitalObject":
        return replace(self, seq=seq)


def validate_object(obj: DigitalObject) -> None:
    """Raise InvalidObject naming the violated field."""
    if not is_valid_object_id(obj.id):
        raise InvalidObject(f"id: malformed object IRI {obj.id!r}")
    if obj.state not in (ACTIVE, DELETED):
        raise InvalidObject(f"state: unknown state {obj.state!r}")
    if obj.state == ACTIVE:
        if not obj.types:
            raise InvalidObject("types: must be non-empty")
    if len(set(obj.types)) != len(obj.types):
        raise InvalidObject("types: duplicate type names")
    if obj.modified < obj.created:
        raise InvalidObject("modified: earlier than created")
    seen = set()
    for ds in obj.datastreams:
        if not _DS_ID_RE.match(ds.ds_id):
            raise InvalidObject(f"datastreams: malformed dsId {ds.ds_id!r}")
        if ds.ds_id in seen:
            raise InvalidObject(f"datastreams: duplicate dsId {ds.ds_id!r}")
        seen.add(ds.ds_id)
        if (ds.content is None) == (ds.surrogate is None):
            raise InvalidObject(
                f"datastreams: {ds.ds_id} must be exactly one of inline/surrogate"
            )
        if ds.surrogate is not None and not _URL_RE.match(ds.surrogate):
            raise InvalidObject(
                f"datastreams: {ds.ds_id} surrogate URL not absolute http(s)"
            )
        if not ds.media_type:
            raise InvalidObject(f"datastreams: {ds.ds_id} missing mediaType")
    for t in obj.relationships:
        if t.subject != obj.id:
            raise InvalidObject(
                f"relationships: triple subject {t.subject!r} != object id"
            )
        if not t.predicate:
            raise InvalidObject("relationships: empty predicate")
    if len(set(obj.relationships)) != len(obj.relationships):
        raise InvalidObject("relationships: duplicate triple")


def make_draft(
    object_id: str,
    types,
    datastreams=(),
    relationships=(),
) -> DigitalObject:
    """Build an unstored draft; the store assigns timestamps and seq."""
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    return DigitalObject(
        id=object_id,
        types=tuple(types),
        created=epoch,
        modified=epoch,
        datastreams=tuple(datastreams),
        relationships=tuple(relationships),
    )


# --- canonical XML ---

_KNOWN_ELEMENTS = {
    "inoObject", "types", "type", "datastreams", "datastream",
    "surrogate", "inline", "relationships", "triple",
}


def serialize_object(obj: DigitalObject) -> bytes:
    """Canonical, deterministic XML bytes for an object."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>\n']
    out.append(
        "<inoObject id=%s state=%s created=%s modified=%s>\n"
        % (
            quoteattr(obj.id),
            quoteattr(obj.state),
            quoteattr(format_ts(obj.created)),
            quoteattr(format_ts(obj.modified)),
        )
    )
    if obj.types:
        body = "".join(f"<type>{escape(t)}</type>" for t in obj.types)
        out.append(f"  <types>{body}</types>\n")
    else:
        out.append("  <types/>\n")
    if obj.datastreams:
        out.append("  <datastreams>\n")
        for ds in obj.datastreams:
            if ds.is_surrogate:
                inner = f"<surrogate href={quoteattr(ds.surrogate)}/>"
            else:
                b64 = base64.b64encode(ds.content).decode("ascii")
                inner = f'<inline encoding="base64">{b64}</inline>'
            out.append(
                "    <datastream id=%s mediaType=%s>%s</datastream>\n"
                % (quoteattr(ds.ds_id), quoteattr(ds.media_type), inner)
            )
        out.append("  </datastreams>\n")
    else:
        out.append("  <datastreams/>\n")
    if obj.relationships:
        out.append("  <relationships>\n")
        for t in obj.relationships:
            out.append(
                "    <triple predicate=%s object=%s kind=%s/>\n"
                % (
                    quoteattr(t.predicate),
                    quoteattr(t.object.value),
                    quoteattr(t.object.kind),
                )
            )
        out.append("  </relationships>\n")
    else:
        out.append("  <relationships/>\n")
    out.append("</inoObject>\n")
    return "".join(out).encode("utf-8")


def _position_of(data: bytes, tag: str) -> tuple[int, int]:
    # best-effort line/column of the first occurrence of an element
    idx = data.find(b"<" + tag.encode("utf-8"))
    if idx < 0:
        return 0, 0
    prefix = data[:idx]
    line = prefix.count(b"\n") + 1
    column = idx - (prefix.rfind(b"\n") + 1)
    return line, column


def deserialize_object(data: bytes) -> DigitalObject:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = getattr(exc, "position", (0, 0))
        raise ParseError(f"malformed XML: {exc.msg if hasattr(exc, 'msg') else exc}",
                         line, column) from exc
    for elem in root.iter():
        if elem.tag not in _KNOWN_ELEMENTS:
            line, column = _position_of(data, elem.tag)
            raise ParseError(f"unknown element {elem.tag!r}", line, column)
    if root.tag != "inoObject":
        line, column = _position_of(data, root.tag)
        raise ParseError(f"unexpected root element {root.tag!r}", line, column)

    def attr(elem, name):
        value = elem.get(name)
        if value is None:
            line, column = _position_of(data, elem.tag)
            raise ParseError(f"missing attribute {name!r} on {elem.tag}", line, column)
        return value

    object_id = attr(root, "id")
    state = attr(root, "state")
    try:
        created = parse_ts(attr(root, "created"))
        modified = parse_ts(attr(root, "modified"))
    except ValueError as exc:
        raise ParseError(str(exc), *_position_of(data, "inoObject")) from exc

    types: list[str] = []
    datastreams: list[Datastream] = []
    relationships: list[Triple] = []
    for section in root:
        if section.tag == "types":
            types = [t.text or "" for t in section]
        elif section.tag == "datastreams":
            for d in section:
                ds_id = attr(d, "id")
                media = attr(d, "mediaType")
                if len(d) != 1:
                    raise ParseError(
                        f"datastream {ds_id!r} needs exactly one content element",
                        *_position_of(data, "datastream"),
                    )
                inner = d[0]
                if inner.tag == "surrogate":
                    datastreams.append(
                        Datastream(ds_id, media, surrogate=attr(inner, "href"))
                    )
                else:
                    if inner.get("encoding") != "base64":
                        raise ParseError(
                            "inline content must declare base64 encoding",
                            *_position_of(data, "inline"),
                        )
                    try:
                        content = base64.b64decode(inner.text or "", validate=True)
                    except Exception as exc:
                        raise ParseError(
                            f"bad base64 in datastream {ds_id!r}",
                            *_position_of(data, "inline"),
                        ) from exc
                    datastreams.append(Datastream(ds_id, media, content=content))
        elif section.tag == "relationships":
            for t in section:
                kind = attr(t, "kind")
                if kind not in ("iri", "literal"):
                    raise ParseError(
                        f"bad triple kind {kind!r}", *_position_of(data, "triple")
                    )
                relationships.append(
                    Triple(object_id, attr(t, "predicate"),
                           Term(kind, attr(t, "object")))
                )

    obj = DigitalObject(
        id=object_id,
        types=tuple(types),
        state=state,
        created=created,
        modified=modified,
        datastreams=tuple(datastreams),
        relationships=tuple(relationships),
    )
    validate_object(obj)
    return obj
