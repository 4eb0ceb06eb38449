"""Typed relational vocabularies, ground predicates, world states and the
ground-predicate ordering.

A world state is a closed-world set of true facts for one time slice.  Facts
are stored as ``(predicate, args)`` tuples; :class:`GroundPredicate` adds the
time stamp back when a fully qualified fact is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

__all__ = [
    "PredicateSignature",
    "Vocabulary",
    "GroundPredicate",
    "WorldState",
    "Ordering",
    "precedes",
    "VocabularyError",
]


class VocabularyError(ValueError):
    """Raised for ill-typed symbols or facts."""


@dataclass(frozen=True)
class PredicateSignature:
    """Name, argument types and classification of a predicate.

    The time argument is implicit.  ``functional`` marks attribute predicates
    ``A(obj, value)`` where exactly one value holds per object.  ``event`` marks
    certain predicates (actions) that hold only at the step they are asserted;
    other certain predicates persist unchanged.
    """

    name: str
    arg_types: tuple[str, ...]
    kind: str = "simple"
    certain: bool = False
    functional: bool = False
    event: bool = False

    def __post_init__(self):
        if self.kind not in ("simple", "complex"):
            raise VocabularyError(f"{self.name}: kind must be simple or complex")
        if self.kind == "complex" and len(self.arg_types) < 2:
            raise VocabularyError(f"{self.name}: complex predicates need two arguments")
        if self.functional and len(self.arg_types) != 2:
            raise VocabularyError(f"{self.name}: functional predicates are binary")
        if self.event and not self.certain:
            raise VocabularyError(f"{self.name}: event predicates must be certain")

    @property
    def arity(self) -> int:
        return len(self.arg_types)


@dataclass(frozen=True)
class GroundPredicate:
    pred: str
    args: tuple[str, ...]
    time: int = 0

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.pred, self.args)

    def __str__(self):
        return f"{self.pred}({','.join(self.args)})@{self.time}"


class Vocabulary:
    """Types, per-type ordered constants and predicate signatures.

    Constant names are global: a constant belongs to exactly one type.  The
    per-type list order is the constant part of the ordering.
    """

    def __init__(self, constants: Mapping[str, Iterable[str]],
                 predicates: Iterable[PredicateSignature]):
        self.constants: dict[str, tuple[str, ...]] = {}
        self.constant_type: dict[str, str] = {}
        for typ, consts in constants.items():
            consts = tuple(consts)
            if len(set(consts)) != len(consts):
                raise VocabularyError(f"duplicate constants in type {typ}")
            for c in consts:
                if c in self.constant_type:
                    raise VocabularyError(f"constant {c} declared in two types")
                self.constant_type[c] = typ
            self.constants[typ] = consts
        self.predicates: dict[str, PredicateSignature] = {}
        for sig in predicates:
            if sig.name in self.predicates:
                raise VocabularyError(f"duplicate predicate {sig.name}")
            for typ in sig.arg_types:
                if typ not in self.constants:
                    raise VocabularyError(f"{sig.name}: unknown type {typ}")
            self.predicates[sig.name] = sig
        self.rank: dict[str, int] = {}
        for consts in self.constants.values():
            for i, c in enumerate(consts):
                self.rank[c] = i

    @property
    def types(self) -> tuple[str, ...]:
        return tuple(self.constants)

    def signature(self, pred: str) -> PredicateSignature:
        try:
            return self.predicates[pred]
        except KeyError:
            raise VocabularyError(f"unknown predicate {pred}") from None

    def check(self, pred: str, args: tuple[str, ...]) -> None:
        sig = self.signature(pred)
        if len(args) != sig.arity:
            raise VocabularyError(f"{pred} expects {sig.arity} arguments, got {len(args)}")
        for a, typ in zip(args, sig.arg_types):
            if self.constant_type.get(a) != typ:
                raise VocabularyError(f"{pred}: {a!r} is not a constant of type {typ}")

    def groundings(self, pred: str) -> list[tuple[str, ...]]:
        """All argument tuples of ``pred`` in lexicographic constant order."""
        sig = self.signature(pred)
        out: list[tuple[str, ...]] = [()]
        for typ in sig.arg_types:
            out = [prefix + (c,) for prefix in out for c in self.constants[typ]]
        return out

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.constants == other.constants and self.predicates == other.predicates

    def __hash__(self):
        return hash(tuple(self.constants.items()))


@dataclass(frozen=True)
class Ordering:
    """Total order over predicates plus the vocabulary's constant orders."""

    predicate_order: tuple[str, ...]
    vocabulary: Vocabulary = field(compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.predicate_order)) != len(self.predicate_order):
            raise VocabularyError("predicate order lists a predicate twice")
        missing = set(self.vocabulary.predicates) - set(self.predicate_order)
        extra = set(self.predicate_order) - set(self.vocabulary.predicates)
        if missing or extra:
            raise VocabularyError(
                f"predicate order must cover the vocabulary exactly "
                f"(missing={sorted(missing)}, unknown={sorted(extra)})")

    @classmethod
    def from_vocabulary(cls, vocab: Vocabulary, predicate_order=None) -> "Ordering":
        return cls(tuple(predicate_order or vocab.predicates), vocab)

    @cached_property
    def predicate_rank(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.predicate_order)}

    def sort_key(self, pred: str, args: tuple[str, ...], time: int = 0):
        rank = self.vocabulary.rank
        return (time, self.predicate_rank[pred], tuple(rank[a] for a in args))


def precedes(a: GroundPredicate, b: GroundPredicate, ordering: Ordering) -> bool:
    """True iff ``a`` strictly precedes ``b``: time first, then predicate,
    then the first differing argument."""
    prank = ordering.predicate_rank
    if a.pred not in prank or b.pred not in prank:
        raise VocabularyError("ground predicates do not belong to this ordering")
    vocab = ordering.vocabulary
    vocab.check(a.pred, a.args)
    vocab.check(b.pred, b.args)
    return ordering.sort_key(a.pred, a.args, a.time) < ordering.sort_key(b.pred, b.args, b.time)


class WorldState:
    """Closed-world set of true facts at one time step.

    ``facts`` holds ``(pred, args)`` pairs.  Instances are treated as
    immutable; :meth:`updated` returns a modified copy.  The attribute and
    relation indexes are derived views computed on first use.
    """

    __slots__ = ("vocabulary", "time", "facts", "__dict__")

    def __init__(self, vocabulary: Vocabulary, time: int, facts: Iterable = ()):
        self.vocabulary = vocabulary
        self.time = time
        self.facts = frozenset(
            f.key if isinstance(f, GroundPredicate) else (f[0], tuple(f[1]))
            for f in facts)

    @classmethod
    def validated(cls, vocabulary: Vocabulary, time: int, facts: Iterable) -> "WorldState":
        state = cls(vocabulary, time, facts)
        for pred, args in state.facts:
            vocabulary.check(pred, args)
        return state

    def holds(self, pred: str, args: tuple[str, ...]) -> bool:
        return (pred, args) in self.facts

    @property
    def true_facts(self) -> frozenset[GroundPredicate]:
        return frozenset(GroundPredicate(p, a, self.time) for p, a in self.facts)

    @cached_property
    def attribute_index(self) -> dict[tuple[str, str], str]:
        """``(pred, obj) -> value`` for functional predicates."""
        preds = self.vocabulary.predicates
        return {(p, a[0]): a[1] for p, a in self.facts if preds[p].functional}

    @cached_property
    def relation_index(self) -> dict[str, dict[str, frozenset[str]]]:
        """Per complex predicate, first argument -> set of partners."""
        preds = self.vocabulary.predicates
        acc: dict[str, dict[str, set[str]]] = {}
        for p, a in self.facts:
            if preds[p].kind == "complex":
                acc.setdefault(p, {}).setdefault(a[0], set()).add(a[1])
        return {p: {k: frozenset(v) for k, v in d.items()} for p, d in acc.items()}

    def value(self, pred: str, obj: str):
        return self.attribute_index.get((pred, obj))

    def updated(self, add=(), remove=(), time: int | None = None) -> "WorldState":
        facts = (set(self.facts) - set(remove)) | set(add)
        return WorldState(self.vocabulary, self.time if time is None else time, facts)

    def restricted(self, preds) -> frozenset:
        preds = set(preds)
        return frozenset(f for f in self.facts if f[0] in preds)

    def __eq__(self, other):
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.time == other.time and self.facts == other.facts

    def __hash__(self):
        return hash((self.time, self.facts))

    def __repr__(self):
        return f"WorldState(t={self.time}, {len(self.facts)} facts)"
