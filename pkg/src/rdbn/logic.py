"""First-order formulas over world states, with counting quantifiers.

Terms are either constant names (plain ``str``) or :class:`Var` instances.
Atoms refer to the current slice (``lag=0``) or the previous one (``lag=1``).
Quantified variables range over one declared type.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

__all__ = [
    "Var", "Atom", "TermEq", "TermLt", "Not", "And", "Or", "Exists", "Forall",
    "CountCmp", "Formula", "EvaluationError", "evaluate", "count_satisfying",
    "witness", "free_variables", "atoms",
]


class EvaluationError(ValueError):
    """Unbound variable, bad time reference or missing previous state."""


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


Term = Union[str, Var]


@dataclass(frozen=True)
class Atom:
    pred: str
    terms: tuple
    lag: int = 0

    def __post_init__(self):
        if self.lag not in (0, 1):
            raise EvaluationError(f"{self.pred}: atoms may reference only t and t-1")


@dataclass(frozen=True)
class TermEq:
    left: Term
    right: Term


@dataclass(frozen=True)
class TermLt:
    """Strict constant-order comparison of two same-typed terms."""
    left: Term
    right: Term


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Exists:
    var: str
    type: str
    body: "Formula"


@dataclass(frozen=True)
class Forall:
    var: str
    type: str
    body: "Formula"


COMPARATORS: dict[str, Callable[[int, int], bool]] = {
    "=": operator.eq, "<": operator.lt, ">": operator.gt,
    ">=": operator.ge, "<=": operator.le,
}


@dataclass(frozen=True)
class CountCmp:
    op: str
    n: int
    var: str
    type: str
    body: "Formula"

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise EvaluationError(f"unknown count comparator {self.op!r}")


Formula = Union[Atom, TermEq, TermLt, Not, And, Or, Exists, Forall, CountCmp]

# (pred, args, lag) -> True/False to override the state, or None to defer.
AtomGuard = Callable[[str, tuple, int], Optional[bool]]


def _resolve(term: Term, env: Mapping[str, str]) -> str:
    if isinstance(term, Var):
        try:
            return env[term.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {term.name}") from None
    return term


def evaluate(f: Formula, state, prev=None, env: Mapping[str, str] | None = None,
             guard: AtomGuard | None = None) -> bool:
    """Standard satisfaction of ``f`` over the finite domain of ``state``."""
    return _eval(f, state, prev, dict(env or {}), guard)


def _eval(f, state, prev, env, guard) -> bool:
    if isinstance(f, Atom):
        args = tuple(_resolve(t, env) for t in f.terms)
        if guard is not None:
            forced = guard(f.pred, args, f.lag)
            if forced is not None:
                return forced
        if f.lag == 0:
            return state.holds(f.pred, args)
        if prev is None:
            raise EvaluationError(f"{f.pred}@t-1 referenced without a previous state")
        return prev.holds(f.pred, args)
    if isinstance(f, Not):
        return not _eval(f.body, state, prev, env, guard)
    if isinstance(f, And):
        return all(_eval(g, state, prev, env, guard) for g in f.items)
    if isinstance(f, Or):
        return any(_eval(g, state, prev, env, guard) for g in f.items)
    if isinstance(f, TermEq):
        return _resolve(f.left, env) == _resolve(f.right, env)
    if isinstance(f, TermLt):
        rank = state.vocabulary.rank
        return rank[_resolve(f.left, env)] < rank[_resolve(f.right, env)]
    if isinstance(f, (Exists, Forall, CountCmp)):
        domain = state.vocabulary.constants[f.type]
        saved = env.get(f.var, _MISSING)
        try:
            if isinstance(f, Exists):
                res = False
                for c in domain:
                    env[f.var] = c
                    if _eval(f.body, state, prev, env, guard):
                        res = True
                        break
            elif isinstance(f, Forall):
                res = True
                for c in domain:
                    env[f.var] = c
                    if not _eval(f.body, state, prev, env, guard):
                        res = False
                        break
            else:
                k = 0
                for c in domain:
                    env[f.var] = c
                    k += _eval(f.body, state, prev, env, guard)
                res = COMPARATORS[f.op](k, f.n)
        finally:
            if saved is _MISSING:
                env.pop(f.var, None)
            else:
                env[f.var] = saved
        return res
    raise TypeError(f"not a formula: {f!r}")


_MISSING = object()


def count_satisfying(var: str, type_: str, f: Formula, state, prev=None,
                     env: Mapping[str, str] | None = None,
                     guard: AtomGuard | None = None) -> int:
    """Number of constants ``c`` of ``type_`` for which ``f[var := c]`` holds."""
    env = dict(env or {})
    n = 0
    for c in state.vocabulary.constants[type_]:
        env[var] = c
        n += _eval(f, state, prev, env, guard)
    return n


def witness(f: Formula, state, prev=None, env=None, guard=None) -> dict[str, str] | None:
    """Bindings of the leading existential chain of ``f``, or None if ``f`` fails.

    For ``Exists x. Exists y. body`` the lexicographically least satisfying
    ``(x, y)`` under the constant order is returned.  Formulas that do not
    start with an existential yield ``{}`` when satisfied.
    """
    env = dict(env or {})
    chain = []
    while isinstance(f, Exists):
        chain.append((f.var, f.type))
        f = f.body

    def search(i):
        if i == len(chain):
            return {} if _eval(f, state, prev, env, guard) else None
        var, typ = chain[i]
        for c in state.vocabulary.constants[typ]:
            env[var] = c
            found = search(i + 1)
            if found is not None:
                return {var: c, **found}
        env.pop(var, None)
        return None

    return search(0)


def free_variables(f: Formula, bound: frozenset = frozenset()) -> set[str]:
    if isinstance(f, Atom):
        return {t.name for t in f.terms if isinstance(t, Var) and t.name not in bound}
    if isinstance(f, (TermEq, TermLt)):
        return {t.name for t in (f.left, f.right) if isinstance(t, Var) and t.name not in bound}
    if isinstance(f, Not):
        return free_variables(f.body, bound)
    if isinstance(f, (And, Or)):
        out: set[str] = set()
        for g in f.items:
            out |= free_variables(g, bound)
        return out
    if isinstance(f, (Exists, Forall, CountCmp)):
        return free_variables(f.body, bound | {f.var})
    raise TypeError(f"not a formula: {f!r}")


def atoms(f: Formula):
    """Yield every atom in ``f``."""
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, Not):
        yield from atoms(f.body)
    elif isinstance(f, (And, Or)):
        for g in f.items:
            yield from atoms(g)
    elif isinstance(f, (Exists, Forall, CountCmp)):
        yield from atoms(f.body)
