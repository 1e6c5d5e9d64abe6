"""Information network overlay repository: a directed, ontologically-typed
graph of compound digital objects with a constraint-enforcing API, conjunctive
graph queries, disseminations, and an OAI-PMH 2.0 provider.
"""

from .api import MembershipDelta, MetadataSpec, Repository, ResourceSpec
from .corpus import CorpusProfile, generate_corpus
from .harvest import Harvester
from .index import ConjunctiveQuery, SolutionRow, TripleIndex, TriplePattern, Var
from .model import Datastream, DigitalObject, Term, Triple, VirtualClock
from .oai import OaiProvider
from .ontology import OntologyRegistry
from .store import ChangeEvent, ObjectStore

__all__ = [
    "ChangeEvent",
    "ConjunctiveQuery",
    "CorpusProfile",
    "Datastream",
    "DigitalObject",
    "Harvester",
    "MembershipDelta",
    "MetadataSpec",
    "OaiProvider",
    "ObjectStore",
    "OntologyRegistry",
    "Repository",
    "ResourceSpec",
    "SolutionRow",
    "Term",
    "Triple",
    "TripleIndex",
    "TriplePattern",
    "Var",
    "VirtualClock",
    "generate_corpus",
]
