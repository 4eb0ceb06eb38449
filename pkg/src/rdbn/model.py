"""First-order probability trees and RDBN model containers.

A :class:`PredicateModel` attaches a first-order probability tree (FOPT) to a
predicate.  Walking the tree from the root, each interior formula is evaluated
with the query's arguments bound to the model's parameter names; the leaf
reached gives the probability that the query grounding is true.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .logic import (Atom, EvaluationError, Exists, Formula, atoms, count_satisfying,
                    evaluate, free_variables, witness)
from .relational import GroundPredicate, Ordering, Vocabulary, WorldState

__all__ = [
    "Const", "CountTerm", "Ratio", "Product", "Clamp", "ProbExpression",
    "Leaf", "Interior", "Fopt", "PredicateModel", "Rdbn", "Diagnostic",
    "eval_fopt", "eval_expression", "validate_acyclic", "check_model",
    "ground_transition", "sample_slice", "carry_certain", "transition_groundings",
    "slice_outcomes",
]


# -- leaf expressions ---------------------------------------------------------

@dataclass(frozen=True)
class Const:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability out of range: {self.p}")


@dataclass(frozen=True)
class CountTerm:
    var: str
    type: str
    formula: Formula


@dataclass(frozen=True)
class Ratio:
    numerator: Union[float, int, CountTerm]
    denominator: CountTerm


@dataclass(frozen=True)
class Product:
    items: tuple


@dataclass(frozen=True)
class Clamp:
    inner: "ProbExpression"


ProbExpression = Union[Const, Ratio, Product, Clamp]


def _value(expr, state, prev, env, guard) -> float:
    if isinstance(expr, Const):
        return expr.p
    if isinstance(expr, (int, float)):
        return float(expr)
    if isinstance(expr, CountTerm):
        return float(count_satisfying(expr.var, expr.type, expr.formula, state, prev, env, guard))
    if isinstance(expr, Ratio):
        den = _value(expr.denominator, state, prev, env, guard)
        if den == 0:
            raise EvaluationError("ratio with zero denominator")
        return _value(expr.numerator, state, prev, env, guard) / den
    if isinstance(expr, Product):
        out = 1.0
        for item in expr.items:
            out *= _value(item, state, prev, env, guard)
        return out
    if isinstance(expr, Clamp):
        return min(1.0, max(0.0, _value(expr.inner, state, prev, env, guard)))
    raise TypeError(f"not a probability expression: {expr!r}")


def eval_expression(expr: ProbExpression, state, prev=None, env=None, guard=None) -> float:
    return _value(expr, state, prev, dict(env or {}), guard)


# -- trees --------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    expr: ProbExpression

    def __post_init__(self):
        if not isinstance(self.expr, (Const, Clamp)):
            object.__setattr__(self, "expr", Clamp(self.expr))


@dataclass(frozen=True)
class Interior:
    formula: Formula
    if_true: "Node"
    if_false: "Node"
    binds: tuple[str, ...] = ()


Node = Union[Leaf, Interior]


@dataclass(frozen=True)
class Fopt:
    root: Node

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, Interior):
                stack.extend((node.if_false, node.if_true))

    def leaves(self):
        return [n for n in self.nodes() if isinstance(n, Leaf)]


@dataclass(frozen=True)
class PredicateModel:
    """The conditional model of one predicate.

    ``params`` names the variables bound to the query's arguments and
    ``parents`` lists ``(predicate, lag)`` pairs, lag 1 meaning t-1.
    """

    predicate: str
    params: tuple[str, ...]
    parents: tuple[tuple[str, int], ...]
    fopt: Fopt


@dataclass(frozen=True)
class Diagnostic:
    message: str
    severity: str = "error"
    line: int = 0
    col: int = 0
    file: str = "<model>"

    def __str__(self):
        return f"{self.file}:{self.line}:{self.col}: {self.severity}: {self.message}"


@dataclass
class Rdbn:
    """An initial network and a two-slice transition network over one vocabulary."""

    vocabulary: Vocabulary
    ordering: Ordering
    initial: dict[str, PredicateModel]
    transition: dict[str, PredicateModel]
    warnings: list = field(default_factory=list)

    @property
    def uncertain(self) -> tuple[str, ...]:
        preds = self.vocabulary.predicates
        return tuple(p for p in self.ordering.predicate_order if not preds[p].certain)

    def complex_predicates(self) -> tuple[str, ...]:
        preds = self.vocabulary.predicates
        return tuple(p for p in self.uncertain if preds[p].kind == "complex")


def _self_guard(model: PredicateModel, args: tuple, vocab: Vocabulary):
    """Own-predicate atoms at slice t only see groundings preceding the query."""
    rank = vocab.rank
    key = tuple(rank[a] for a in args)
    pred = model.predicate

    def guard(p, a, lag):
        if p == pred and lag == 0 and tuple(rank[x] for x in a) >= key:
            return False
        return None
    return guard


def eval_fopt(model: PredicateModel, query, state, prev=None) -> float:
    """Probability that ``query`` (a GroundPredicate or argument tuple) is true."""
    args = query.args if isinstance(query, GroundPredicate) else tuple(query)
    if isinstance(query, GroundPredicate) and query.pred != model.predicate:
        raise EvaluationError(f"query {query.pred} does not match model {model.predicate}")
    if len(args) != len(model.params):
        raise EvaluationError(f"{model.predicate}: wrong number of query arguments")
    env = dict(zip(model.params, args))
    guard = _self_guard(model, args, state.vocabulary)
    node = model.fopt.root
    while isinstance(node, Interior):
        if node.binds:
            found = witness(node.formula, state, prev, env, guard)
            ok = found is not None
            if ok:
                for v in node.binds:
                    env[v] = found[v]
        else:
            ok = evaluate(node.formula, state, prev, env, guard)
        node = node.if_true if ok else node.if_false
    return eval_expression(node.expr, state, prev, env, guard)


# -- validation ---------------------------------------------------------------

def validate_acyclic(model: Rdbn) -> list[Diagnostic]:
    """Check the same-slice parent restrictions; an empty list means ok."""
    diags: list[Diagnostic] = []
    prank = model.ordering.predicate_rank
    for net_name, net in (("initial", model.initial), ("transition", model.transition)):
        edges: dict[str, set[str]] = {}
        for pred, pm in net.items():
            for parent, lag in pm.parents:
                if net_name == "initial" and lag == 1:
                    diags.append(Diagnostic(
                        f"{net_name} model of {pred} has a t-1 parent {parent}"))
                if lag == 0 and parent != pred:
                    edges.setdefault(pred, set()).add(parent)
                    if prank[parent] > prank[pred]:
                        diags.append(Diagnostic(
                            f"{net_name}: same-slice parent {parent} of {pred} does not "
                            f"precede it ({parent} -> {pred})"))
        cycle = _find_cycle(edges)
        if cycle:
            diags.append(Diagnostic(f"{net_name}: same-slice cycle " + " -> ".join(cycle)))
    return diags


def _find_cycle(edges: Mapping[str, set[str]]):
    color: dict[str, int] = {}
    path: list[str] = []

    def visit(u):
        color[u] = 1
        path.append(u)
        for v in sorted(edges.get(u, ())):
            if color.get(v) == 1:
                return path[path.index(v):] + [v]
            if color.get(v) is None:
                found = visit(v)
                if found:
                    return found
        path.pop()
        color[u] = 2
        return None

    for u in sorted(edges):
        if color.get(u) is None:
            found = visit(u)
            if found:
                return found
    return None


def _expr_formulas(expr):
    if isinstance(expr, CountTerm):
        yield expr, expr.formula
    elif isinstance(expr, Ratio):
        yield from _expr_formulas(expr.numerator)
        yield from _expr_formulas(expr.denominator)
    elif isinstance(expr, Product):
        for item in expr.items:
            yield from _expr_formulas(item)
    elif isinstance(expr, Clamp):
        yield from _expr_formulas(expr.inner)


def check_model(model: Rdbn) -> list[Diagnostic]:
    """Structural checks: coverage, parent lists, bound variables, acyclicity."""
    diags: list[Diagnostic] = []
    vocab = model.vocabulary
    for pred in model.uncertain:
        for net_name, net in (("initial", model.initial), ("transition", model.transition)):
            if pred not in net:
                diags.append(Diagnostic(f"uncertain predicate {pred} has no {net_name} model"))
    for net_name, net in (("initial", model.initial), ("transition", model.transition)):
        for pred, pm in net.items():
            sig = vocab.predicates.get(pred)
            if sig is None:
                diags.append(Diagnostic(f"model for unknown predicate {pred}"))
                continue
            if sig.certain:
                diags.append(Diagnostic(f"certain predicate {pred} must not have a model"))
            if len(pm.params) != sig.arity:
                diags.append(Diagnostic(f"{pred}: model binds {len(pm.params)} of {sig.arity} arguments"))
            declared = set(pm.parents) | {(pred, 0)}
            if net_name == "transition":
                declared.add((pred, 1))
            _check_tree(pm, pm.fopt.root, set(pm.params), declared, diags, net_name)
    diags.extend(validate_acyclic(model))
    seen, unique = set(), []
    for d in diags:
        if d not in seen:
            seen.add(d)
            unique.append(d)
    return unique


def _check_tree(pm, node, bound, declared, diags, net_name):
    if isinstance(node, Interior):
        for a in atoms(node.formula):
            if (a.pred, a.lag) not in declared:
                diags.append(Diagnostic(
                    f"{net_name} {pm.predicate}: atom {a.pred}@{'t-1' if a.lag else 't'} "
                    f"is not a declared parent"))
        unbound = free_variables(node.formula) - bound
        if unbound:
            diags.append(Diagnostic(f"{pm.predicate}: unbound variables {sorted(unbound)}"))
        inner = bound | set(node.binds)
        if node.binds:
            chain = []
            f = node.formula
            while isinstance(f, Exists):
                chain.append(f.var)
                f = f.body
            missing = set(node.binds) - set(chain)
            if missing:
                diags.append(Diagnostic(
                    f"{pm.predicate}: bound witnesses {sorted(missing)} are not leading existentials"))
        _check_tree(pm, node.if_true, inner, declared, diags, net_name)
        _check_tree(pm, node.if_false, bound, declared, diags, net_name)
    else:
        for term, f in _expr_formulas(node.expr):
            for a in atoms(f):
                if (a.pred, a.lag) not in declared:
                    diags.append(Diagnostic(
                        f"{net_name} {pm.predicate}: count atom {a.pred} is not a declared parent"))
                if a.lag == 0 and net_name == "transition":
                    diags.append(Diagnostic(
                        f"{pm.predicate}: leaf count reads slice t ({a.pred})", severity="warning"))
            unbound = free_variables(f) - bound - {term.var}
            if unbound:
                diags.append(Diagnostic(f"{pm.predicate}: unbound leaf variables {sorted(unbound)}"))


# -- grounding and sampling ---------------------------------------------------

class _Scratch:
    """Growing fact set for sequential sampling within one slice."""

    __slots__ = ("vocabulary", "time", "facts")

    def __init__(self, vocabulary, time, facts):
        self.vocabulary = vocabulary
        self.time = time
        self.facts = facts

    def holds(self, pred, args):
        return (pred, args) in self.facts


def transition_groundings(model: Rdbn) -> list[tuple[str, tuple]]:
    """Uncertain groundings of one slice in ≺ order."""
    return [(p, a) for p in model.uncertain for a in model.vocabulary.groundings(p)]


def carry_certain(model: Rdbn, prev: WorldState | None, events: Iterable = ()) -> set:
    """Certain facts of the next slice: persistent certain facts plus ``events``."""
    preds = model.vocabulary.predicates
    facts = set()
    if prev is not None:
        facts = {f for f in prev.facts if preds[f[0]].certain and not preds[f[0]].event}
    for e in events:
        facts.add(e.key if isinstance(e, GroundPredicate) else (e[0], tuple(e[1])))
    return facts


def ground_transition(model: Rdbn, prev: WorldState | None, sampled: WorldState):
    """≺-ordered ``(GroundPredicate, P(true))`` for every uncertain grounding.

    Each probability is conditioned on ``prev`` and on the facts of
    ``sampled``; the self-reference guard hides groundings that do not
    precede the query, so the entry for a grounding is its exact conditional
    whenever ``sampled`` fixes all groundings before it.  With ``prev=None``
    the initial network is used.
    """
    net = model.initial if prev is None else model.transition
    out = []
    for pred, args in transition_groundings(model):
        p = eval_fopt(net[pred], args, sampled, prev)
        out.append((GroundPredicate(pred, args, sampled.time), p))
    return out


def sample_slice(model: Rdbn, prev: WorldState | None, rng, events: Iterable = (),
                 certain: Iterable | None = None, time: int | None = None) -> WorldState:
    """Draw one slice by sampling groundings sequentially in ≺ order."""
    time = (0 if prev is None else prev.time + 1) if time is None else time
    facts = set(certain) if certain is not None else carry_certain(model, prev, events)
    scratch = _Scratch(model.vocabulary, time, facts)
    net = model.initial if prev is None else model.transition
    for pred, args in transition_groundings(model):
        p = eval_fopt(net[pred], args, scratch, prev)
        if p > 0.0 and (p >= 1.0 or rng.random() < p):
            facts.add((pred, args))
    return WorldState(model.vocabulary, time, facts)


def slice_outcomes(model: Rdbn, prev: WorldState | None, certain: set, time: int):
    """Exact distribution of the next slice as ``[(facts, prob)]``.

    Branches only on groundings with probability strictly between 0 and 1,
    so it is practical for models with few genuinely uncertain groundings.
    """
    net = model.initial if prev is None else model.transition
    order = transition_groundings(model)
    out = []

    def walk(i, facts, prob):
        scratch = _Scratch(model.vocabulary, time, facts)
        while i < len(order):
            pred, args = order[i]
            p = eval_fopt(net[pred], args, scratch, prev)
            if 0.0 < p < 1.0:
                walk(i + 1, facts | {(pred, args)}, prob * p)
                prob *= 1.0 - p
            elif p >= 1.0:
                facts = facts | {(pred, args)}
                scratch = _Scratch(model.vocabulary, time, facts)
            i += 1
        out.append((frozenset(facts), prob))

    walk(0, frozenset(certain), 1.0)
    return out
