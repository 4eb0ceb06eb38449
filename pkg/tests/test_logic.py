import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdbn import (And, Atom, CountCmp, EvaluationError, Exists, Forall, Not, Or,
                  PredicateSignature, TermEq, Var, Vocabulary, WorldState, count_satisfying,
                  evaluate)
from rdbn.logic import TermLt, free_variables, witness

x, y, c = Var("x"), Var("y"), Var("c")

VOCAB = Vocabulary(
    {"obj": ["P1", "B1", "B2", "B3"], "color": ["red", "blue"]},
    [PredicateSignature("Bracket", ("obj",)),
     PredicateSignature("Color", ("obj", "color"), functional=True),
     PredicateSignature("Link", ("obj", "obj"), kind="complex")])


def state(facts, t=0):
    return WorldState(VOCAB, t, facts)


def test_witnessed_existential():
    s = state([("Color", ("P1", "red")), ("Color", ("B1", "red"))])
    f = Exists("c", "color", And((Atom("Color", ("P1", c)), Atom("Color", ("B1", c)))))
    assert evaluate(f, s)
    assert witness(f, s) == {"c": "red"}


def test_count_at_least_two_brackets():
    s = state([("Bracket", (b,)) for b in ("B1", "B2", "B3")])
    assert evaluate(CountCmp(">=", 2, "x", "obj", Atom("Bracket", (x,))), s)
    assert not evaluate(CountCmp(">", 3, "x", "obj", Atom("Bracket", (x,))), s)
    assert count_satisfying("x", "obj", Atom("Bracket", (x,)), s) == 3


def test_contradiction_is_false():
    s = state([("Bracket", ("B1",))])
    a = Atom("Bracket", ("B1",))
    assert not evaluate(And((a, Not(a))), s)


def test_previous_slice_atoms():
    prev = state([("Color", ("B1", "blue"))], 0)
    cur = state([("Color", ("B1", "red"))], 1)
    f = Atom("Color", ("B1", "blue"), lag=1)
    assert evaluate(f, cur, prev)
    with pytest.raises(EvaluationError):
        evaluate(f, cur)


def test_unbound_variable_and_lag_range():
    with pytest.raises(EvaluationError):
        evaluate(Atom("Bracket", (x,)), state([]))
    with pytest.raises(Exception):
        Atom("Bracket", ("B1",), lag=2)


def test_unsatisfiable_and_universal_counts():
    s = state([("Bracket", ("B1",))])
    body = And((Atom("Bracket", (x,)), Not(Atom("Bracket", (x,)))))
    assert count_satisfying("x", "obj", body, s) == 0
    assert count_satisfying("x", "obj", TermEq(x, x), s) == 4


def test_count_with_previous_slice_colour():
    # count(w | Bracket(w) & Color(w, red)@t-1) with exactly two red brackets
    prev = state([("Bracket", (b,)) for b in ("B1", "B2", "B3")]
                 + [("Color", ("B1", "red")), ("Color", ("B2", "red")),
                    ("Color", ("B3", "blue")), ("Color", ("P1", "red"))])
    cur = state([], 1)
    w = Var("w")
    body = And((Atom("Bracket", (w,), lag=1), Atom("Color", (w, "red"), lag=1)))
    assert count_satisfying("w", "obj", body, cur, prev) == 2


def test_term_order_and_free_variables():
    s = state([])
    assert evaluate(TermLt("P1", "B1"), s)      # declaration order
    f = Exists("y", "obj", And((Atom("Link", (x, y)), TermEq(y, c))))
    assert free_variables(f) == {"x", "c"}


# -- random formulas against an independent evaluator -------------------------------------

OBJS = VOCAB.constants["obj"]
COLORS = VOCAB.constants["color"]


def random_state(rng):
    facts = [("Bracket", (o,)) for o in OBJS if rng.random() < 0.5]
    facts += [("Color", (o, COLORS[rng.integers(2)])) for o in OBJS]
    facts += [("Link", (a, b)) for a in OBJS for b in OBJS if rng.random() < 0.3]
    return state(facts)


def random_formula(rng, depth, scope):
    """Formula over obj variables in ``scope`` (all bound)."""
    terms = [Var(v) for v in scope] + list(OBJS)
    kind = rng.integers(8) if depth > 0 else rng.integers(3)
    pick = lambda: terms[rng.integers(len(terms))]
    if kind == 0:
        return Atom("Bracket", (pick(),))
    if kind == 1:
        return Atom("Link", (pick(), pick()))
    if kind == 2:
        return Atom("Color", (pick(), COLORS[rng.integers(2)]))
    if kind == 3:
        return Not(random_formula(rng, depth - 1, scope))
    if kind == 4:
        return And((random_formula(rng, depth - 1, scope), random_formula(rng, depth - 1, scope)))
    if kind == 5:
        return Or((random_formula(rng, depth - 1, scope), random_formula(rng, depth - 1, scope)))
    v = f"v{depth}"
    body = random_formula(rng, depth - 1, scope + [v])
    if kind == 6:
        return Exists(v, "obj", body)
    return CountCmp([">=", "=", "<", ">", "<="][rng.integers(5)], int(rng.integers(0, 5)), v,
                    "obj", body)


def oracle(f, facts, env):
    """Set-based semantics written independently of the library evaluator."""
    def term(t):
        return env[t.name] if isinstance(t, Var) else t
    if isinstance(f, Atom):
        return (f.pred, tuple(term(t) for t in f.terms)) in facts
    if isinstance(f, Not):
        return not oracle(f.body, facts, env)
    if isinstance(f, And):
        return all(oracle(g, facts, env) for g in f.items)
    if isinstance(f, Or):
        return any(oracle(g, facts, env) for g in f.items)
    sat = [o for o in OBJS if oracle(f.body, facts, {**env, f.var: o})]
    if isinstance(f, Exists):
        return len(sat) > 0
    if isinstance(f, Forall):
        return len(sat) == len(OBJS)
    k, n = len(sat), f.n
    return {">=": k >= n, "<=": k <= n, "=": k == n, "<": k < n, ">": k > n}[f.op]


def test_random_formulas_match_oracle_and_dualities():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        s = random_state(rng)
        f = random_formula(rng, 3, ["x"])
        g = random_formula(rng, 2, ["x"])
        env = {"x": OBJS[rng.integers(len(OBJS))]}
        val = evaluate(f, s, env=env)
        assert val == oracle(f, s.facts, env)
        assert evaluate(Not(f), s, env=env) == (not val)
        # De Morgan
        assert evaluate(Not(And((f, g))), s, env=env) == evaluate(Or((Not(f), Not(g))), s, env=env)
        assert evaluate(Not(Or((f, g))), s, env=env) == evaluate(And((Not(f), Not(g))), s, env=env)
        # counting quantifiers against the plain ones
        assert evaluate(CountCmp(">=", 1, "x", "obj", f), s) == evaluate(Exists("x", "obj", f), s)
        assert evaluate(CountCmp("=", 0, "x", "obj", f), s) == \
            evaluate(Not(Exists("x", "obj", f)), s)
        assert evaluate(Forall("x", "obj", f), s) == evaluate(Not(Exists("x", "obj", Not(f))), s)


@given(st.integers(1, 50), st.integers(0, 2 ** 31 - 1))
def test_count_matches_enumeration(size, seed):
    rng = np.random.default_rng(seed)
    consts = [f"o{i}" for i in range(size)]
    vocab = Vocabulary({"obj": consts}, [PredicateSignature("P", ("obj",)),
                                         PredicateSignature("Q", ("obj",))])
    p, q = rng.random(size) < 0.5, rng.random(size) < 0.5
    s = WorldState(vocab, 0, [("P", (o,)) for o, v in zip(consts, p) if v]
                   + [("Q", (o,)) for o, v in zip(consts, q) if v])
    body = And((Atom("P", (x,)), Not(Atom("Q", (x,)))))
    assert count_satisfying("x", "obj", body, s) == int((p & ~q).sum())
