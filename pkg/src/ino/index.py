"""Triple index over live objects with three access orders (SPO, POS, OSP),
single-pattern matching, and conjunctive (join) query evaluation with a naive
brute-force reference evaluator used as an oracle in tests.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import OracleTooLarge, QuerySyntaxError, QueryTooLarge
from .model import (
    CREATED_DATE,
    HAS_DATASTREAM,
    LOCATION,
    MEDIA_TYPE,
    MODIFIED_DATE,
    OBJECT_TYPE,
    STATE,
    DigitalObject,
    Term,
    Triple,
    format_ts,
    type_iri,
)

_VAR_RE = re.compile(r"\?[a-z][a-z0-9]*$")

MAX_PATTERNS = 8
DEFAULT_RESULT_CAP = 10_000_000
ORACLE_TRIPLE_CAP = 1_000_000


@dataclass(frozen=True)
class Var:
    name: str  # includes the leading '?'

    def __post_init__(self):
        if not _VAR_RE.match(self.name):
            raise QuerySyntaxError(f"bad variable name {self.name!r}")


Atom = Term | Var


@dataclass(frozen=True)
class TriplePattern:
    subject: Atom
    predicate: Atom
    object: Atom

    def variables(self) -> set[str]:
        return {a.name for a in (self.subject, self.predicate, self.object)
                if isinstance(a, Var)}


@dataclass(frozen=True)
class ConjunctiveQuery:
    patterns: tuple[TriplePattern, ...]
    projected: tuple[str, ...]

    def __post_init__(self):
        if not self.patterns or len(self.patterns) > MAX_PATTERNS:
            raise QuerySyntaxError(
                f"query must have 1..{MAX_PATTERNS} patterns"
            )
        available = set()
        for p in self.patterns:
            available |= p.variables()
        for v in self.projected:
            if v not in available:
                raise QuerySyntaxError(
                    f"projected variable {v} not used in any pattern"
                )


@dataclass(frozen=True)
class SolutionRow:
    items: tuple[tuple[str, Term], ...]  # sorted by variable name

    @staticmethod
    def of(bindings: dict[str, Term]) -> "SolutionRow":
        return SolutionRow(tuple(sorted(bindings.items())))

    @property
    def bindings(self) -> dict[str, Term]:
        return dict(self.items)

    def __getitem__(self, var: str) -> Term:
        return self.bindings[var]


def extract_triples(obj: DigitalObject) -> list[Triple]:
    """System triples (types, dates, state, datastreams) then relationships."""
    oid = obj.id
    triples = [Triple(oid, OBJECT_TYPE, Term.iri(type_iri(t))) for t in obj.types]
    triples.append(Triple(oid, CREATED_DATE, Term.literal(format_ts(obj.created))))
    triples.append(Triple(oid, MODIFIED_DATE, Term.literal(format_ts(obj.modified))))
    triples.append(Triple(oid, STATE, Term.literal(obj.state)))
    for ds in obj.datastreams:
        ds_iri = f"{oid}/{ds.ds_id}"
        triples.append(Triple(oid, HAS_DATASTREAM, Term.iri(ds_iri)))
        triples.append(Triple(ds_iri, MEDIA_TYPE, Term.literal(ds.media_type)))
        if ds.is_surrogate:
            triples.append(Triple(ds_iri, LOCATION, Term.literal(ds.surrogate)))
    triples.extend(obj.relationships)
    return triples


def triple_count_formula(obj: DigitalObject) -> int:
    return (
        len(obj.types)
        + 3
        + sum(2 + (1 if ds.is_surrogate else 0) for ds in obj.datastreams)
        + len(obj.relationships)
    )


class TripleIndex:
    """In-memory index with subject-, predicate-, and object-major orders."""

    def __init__(self, result_cap: int = DEFAULT_RESULT_CAP):
        self.result_cap = result_cap
        self._spo: dict[str, dict[str, set[Term]]] = {}
        self._pos: dict[str, dict[Term, set[str]]] = {}
        self._osp: dict[Term, dict[str, set[str]]] = {}
        self._by_object: dict[str, list[Triple]] = {}
        self._count = 0

    # ------------------------------------------------------------ maintenance

    def _add(self, t: Triple) -> None:
        self._spo.setdefault(t.subject, {}).setdefault(t.predicate, set()).add(t.object)
        self._pos.setdefault(t.predicate, {}).setdefault(t.object, set()).add(t.subject)
        self._osp.setdefault(t.object, {}).setdefault(t.subject, set()).add(t.predicate)
        self._count += 1

    def _remove(self, t: Triple) -> None:
        def drop(d, k1, k2, v):
            inner = d[k1]
            s = inner[k2]
            s.discard(v)
            if not s:
                del inner[k2]
            if not inner:
                del d[k1]

        drop(self._spo, t.subject, t.predicate, t.object)
        drop(self._pos, t.predicate, t.object, t.subject)
        drop(self._osp, t.object, t.subject, t.predicate)
        self._count -= 1

    def index_object(self, obj: DigitalObject) -> None:
        if obj.id in self._by_object:
            self.deindex_object(obj.id)
        triples = extract_triples(obj)
        self._by_object[obj.id] = triples
        for t in triples:
            self._add(t)

    def deindex_object(self, object_id: str) -> None:
        for t in self._by_object.pop(object_id, []):
            self._remove(t)

    def rebuild(self, objects) -> None:
        self._spo.clear()
        self._pos.clear()
        self._osp.clear()
        self._by_object.clear()
        self._count = 0
        for obj in objects:
            self.index_object(obj)

    def size(self) -> int:
        return self._count

    def all_triples(self) -> list[Triple]:
        out = []
        for triples in self._by_object.values():
            out.extend(triples)
        return out

    def triple_set(self) -> set[Triple]:
        return set(self.all_triples())

    # --------------------------------------------------------------- matching

    def _candidates(self, p: TriplePattern) -> list[Triple]:
        s = p.subject.value if isinstance(p.subject, Term) else None
        pr = p.predicate.value if isinstance(p.predicate, Term) else None
        o = p.object if isinstance(p.object, Term) else None
        if isinstance(p.subject, Term) and not p.subject.is_iri:
            return []
        if isinstance(p.predicate, Term) and not p.predicate.is_iri:
            return []

        if s is not None and pr is not None:
            objs = self._spo.get(s, {}).get(pr, set())
            if o is not None:
                return [Triple(s, pr, o)] if o in objs else []
            return [Triple(s, pr, obj) for obj in objs]
        if pr is not None and o is not None:
            return [Triple(subj, pr, o) for subj in self._pos.get(pr, {}).get(o, set())]
        if s is not None and o is not None:
            return [Triple(s, pred, o) for pred in self._osp.get(o, {}).get(s, set())]
        if s is not None:
            return [
                Triple(s, pred, obj)
                for pred, objs in self._spo.get(s, {}).items()
                for obj in objs
            ]
        if pr is not None:
            return [
                Triple(subj, pr, obj)
                for obj, subjs in self._pos.get(pr, {}).items()
                for subj in subjs
            ]
        if o is not None:
            return [
                Triple(subj, pred, o)
                for subj, preds in self._osp.get(o, {}).items()
                for pred in preds
            ]
        return self.all_triples()

    def estimate(self, p: TriplePattern) -> int:
        """Exact count of the most-ground access path's range."""
        s = p.subject.value if isinstance(p.subject, Term) else None
        pr = p.predicate.value if isinstance(p.predicate, Term) else None
        o = p.object if isinstance(p.object, Term) else None
        if s is not None and pr is not None and o is not None:
            return 1
        if s is not None and pr is not None:
            return len(self._spo.get(s, {}).get(pr, ()))
        if pr is not None and o is not None:
            return len(self._pos.get(pr, {}).get(o, ()))
        if s is not None and o is not None:
            return len(self._osp.get(o, {}).get(s, ()))
        if s is not None:
            return sum(len(v) for v in self._spo.get(s, {}).values())
        if pr is not None:
            return sum(len(v) for v in self._pos.get(pr, {}).values())
        if o is not None:
            return sum(len(v) for v in self._osp.get(o, {}).values())
        return self._count

    def match(self, p: TriplePattern) -> set[Triple]:
        return set(self._candidates(p))

    # ------------------------------------------------------------- evaluation

    def evaluate(self, q: ConjunctiveQuery) -> set[SolutionRow]:
        ordered = sorted(
            range(len(q.patterns)), key=lambda i: (self.estimate(q.patterns[i]), i)
        )
        rows: list[dict[str, Term]] = [{}]
        for i in ordered:
            pattern = q.patterns[i]
            new_rows: list[dict[str, Term]] = []
            for row in rows:
                self._extend_rows(pattern, row, new_rows)
                if len(new_rows) > self.result_cap:
                    raise QueryTooLarge(
                        f"intermediate result exceeds {self.result_cap} rows"
                    )
            rows = new_rows
            if not rows:
                break
        return _project(rows, q.projected)

    def _extend_rows(self, p: TriplePattern, row: dict[str, Term],
                     out: list[dict[str, Term]]) -> None:
        """Append every extension of `row` matching pattern `p`, binding the
        pattern's open variables straight off the index maps (the hot path of
        evaluate -- no Triple objects are materialized here)."""
        def resolve(atom):
            if isinstance(atom, Var):
                return row.get(atom.name), atom.name
            return atom, None

        s_term, s_var = resolve(p.subject)
        p_term, p_var = resolve(p.predicate)
        o_term, o_var = resolve(p.object)
        # subject and predicate positions only ever hold IRIs
        if (s_term is not None and not s_term.is_iri) or \
           (p_term is not None and not p_term.is_iri):
            return
        s = s_term.value if s_term is not None else None
        pr = p_term.value if p_term is not None else None
        o = o_term

        def emit(*pairs):
            new = dict(row)
            for name, value in pairs:
                existing = new.get(name)
                if existing is not None and existing != value:
                    return  # same variable twice in one pattern
                new[name] = value
            out.append(new)

        if s is not None and pr is not None:
            objs = self._spo.get(s, {}).get(pr)
            if not objs:
                return
            if o is not None:
                if o in objs:
                    out.append(dict(row))
                return
            for obj in objs:
                emit((o_var, obj))
        elif pr is not None and o is not None:
            for subj in self._pos.get(pr, {}).get(o, ()):
                emit((s_var, Term.iri(subj)))
        elif s is not None and o is not None:
            for pred in self._osp.get(o, {}).get(s, ()):
                emit((p_var, Term.iri(pred)))
        elif s is not None:
            for pred, objs in self._spo.get(s, {}).items():
                for obj in objs:
                    emit((p_var, Term.iri(pred)), (o_var, obj))
        elif pr is not None:
            for obj, subjs in self._pos.get(pr, {}).items():
                for subj in subjs:
                    emit((s_var, Term.iri(subj)), (o_var, obj))
        elif o is not None:
            for subj, preds in self._osp.get(o, {}).items():
                for pred in preds:
                    emit((s_var, Term.iri(subj)), (p_var, Term.iri(pred)))
        else:
            for t in self.all_triples():
                emit((s_var, Term.iri(t.subject)),
                     (p_var, Term.iri(t.predicate)), (o_var, t.object))

    def evaluate_brute_force(self, q: ConjunctiveQuery) -> set[SolutionRow]:
        """Semantics-defining reference: filter the full triple list per pattern,
        then join naively in the given pattern order."""
        if self._count > ORACLE_TRIPLE_CAP:
            raise OracleTooLarge(f"{self._count} triples exceeds oracle guard")
        all_triples = self.all_triples()
        rows: list[dict[str, Term]] = [{}]
        for pattern in q.patterns:
            matching = [t for t in all_triples if _unifies(pattern, t)]
            new_rows = []
            for row in rows:
                for t in matching:
                    ext = _merge(pattern, t, row)
                    if ext is not None:
                        new_rows.append(ext)
            rows = new_rows
        return _project(rows, q.projected)


def _unifies(p: TriplePattern, t: Triple) -> bool:
    # ignores cross-variable consistency within one pattern only if names repeat
    binding: dict[str, Term] = {}
    for atom, value in (
        (p.subject, Term.iri(t.subject)),
        (p.predicate, Term.iri(t.predicate)),
        (p.object, t.object),
    ):
        if isinstance(atom, Var):
            if atom.name in binding and binding[atom.name] != value:
                return False
            binding[atom.name] = value
        elif atom != value:
            return False
    return True


def _merge(p: TriplePattern, t: Triple, row: dict[str, Term]):
    # check compatibility before paying for the row copy; `t` is already
    # known to unify with the pattern's ground slots
    pairs: dict[str, Term] = {}
    for atom, value in (
        (p.subject, Term.iri(t.subject)),
        (p.predicate, Term.iri(t.predicate)),
        (p.object, t.object),
    ):
        if isinstance(atom, Var):
            existing = row.get(atom.name, pairs.get(atom.name))
            if existing is not None and existing != value:
                return None
            pairs[atom.name] = value
    ext = dict(row)
    ext.update(pairs)
    return ext


def _project(rows, projected) -> set[SolutionRow]:
    return {
        SolutionRow.of({v: row[v] for v in projected if v in row}) for row in rows
    }


# ------------------------------------------------------------- query grammar

_TOKEN_RE = re.compile(
    r"""
    \s*(
        \?[a-z][a-z0-9]*        |   # variable
        <[^<>\s]+>              |   # iri
        "(?:[^"\\]|\\.)*"       |   # literal with escapes
        ;                           # pattern separator
    )
    """,
    re.VERBOSE,
)


def _parse_atom(tok: str) -> Atom:
    if tok.startswith("?"):
        return Var(tok)
    if tok.startswith("<") and tok.endswith(">"):
        return Term.iri(tok[1:-1])
    if tok.startswith('"') and tok.endswith('"'):
        return Term.literal(tok[1:-1].replace('\\"', '"').replace("\\\\", "\\"))
    raise QuerySyntaxError(f"bad term {tok!r}")


def parse_query(text: str) -> ConjunctiveQuery:
    """Parse ``SELECT ?a ?b WHERE <pattern> ; <pattern> ...``."""
    m = re.match(r"\s*SELECT\s+(.*?)\s+WHERE\s+(.*)$", text, re.DOTALL)
    if not m:
        raise QuerySyntaxError("expected SELECT ... WHERE ...")
    projected = tuple(m.group(1).split())
    for v in projected:
        if not _VAR_RE.match(v):
            raise QuerySyntaxError(f"bad projected variable {v!r}")

    body = m.group(2)
    tokens: list[str] = []
    pos = 0
    while pos < len(body):
        tm = _TOKEN_RE.match(body, pos)
        if not tm:
            if body[pos:].strip():
                raise QuerySyntaxError(f"unexpected input at {body[pos:pos+20]!r}")
            break
        tokens.append(tm.group(1))
        pos = tm.end()

    patterns: list[TriplePattern] = []
    current: list[str] = []

    def flush():
        if not current:
            return
        if len(current) != 3:
            raise QuerySyntaxError(
                f"pattern needs exactly three terms, got {current!r}"
            )
        patterns.append(TriplePattern(*(_parse_atom(t) for t in current)))
        current.clear()

    for tok in tokens:
        if tok == ";":
            flush()
        else:
            current.append(tok)
    flush()
    if not patterns:
        raise QuerySyntaxError("query has no patterns")
    return ConjunctiveQuery(tuple(patterns), projected)
