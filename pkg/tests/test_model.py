import itertools

import numpy as np
import pytest

from rdbn import (And, Atom, Clamp, Const, CountTerm, EvaluationError, Exists, Fopt,
                  GroundPredicate, Interior, Leaf, Not, Or, Ordering, PredicateModel,
                  PredicateSignature, Product, Ratio, Rdbn, TermEq, Var, Vocabulary,
                  WorldState, eval_fopt, ground_transition, parse_model, validate_acyclic)
from rdbn.model import check_model, slice_outcomes, transition_groundings

from oracles import tiny_transition

x, y, z, c = Var("x"), Var("y"), Var("z"), Var("c")

PERSIST = """
type part: A B C
predicate BoltedTo(part, part) uncertain complex

initial BoltedTo(x, y)
  leaf 0.1
end

transition BoltedTo(x, y)
  parents BoltedTo@t-1
  if BoltedTo(x, y)@t-1
    leaf 1
  else
    leaf clamp(1 / count(w:part | !BoltedTo(x, w)@t-1))
end
"""

MUTEX = """
type part: A B C D
predicate WeldedTo(part, part) certain
predicate BoltedTo(part, part) certain
predicate Mutex(part) uncertain
order WeldedTo BoltedTo Mutex

initial Mutex(x)
  parents WeldedTo, BoltedTo
  if #(> 1) z:part. WeldedTo(x, z) | BoltedTo(x, z)
    leaf 0
  else
    leaf 1
end

transition Mutex(x)
  parents WeldedTo, BoltedTo
  if #(> 1) z:part. WeldedTo(x, z) | BoltedTo(x, z)
    leaf 0
  else
    leaf 1
end
"""


def colors(model, assignment, t=0):
    return WorldState(model.vocabulary, t, [("Color", (p, col)) for p, col in assignment.items()])


def test_same_color(color_model):
    s = colors(color_model, {"P1": "Red", "P2": "Red", "P3": "Blue"})
    assert eval_fopt(color_model.initial["BoltedTo"], ("P1", "P2"), s) == pytest.approx(0.3)


def test_different_color(color_model):
    s = colors(color_model, {"P1": "Red", "P2": "Blue", "P3": "Blue"})
    assert eval_fopt(color_model.initial["BoltedTo"], ("P1", "P2"), s) == pytest.approx(0.05)
    q = GroundPredicate("BoltedTo", ("P2", "P3"), 0)
    assert eval_fopt(color_model.initial["BoltedTo"], q, s) == pytest.approx(0.3)


def test_existing_bolt_persists():
    m = parse_model(PERSIST)
    prev = WorldState(m.vocabulary, 0, [("BoltedTo", ("A", "B"))])
    now = WorldState(m.vocabulary, 1, [])
    assert eval_fopt(m.transition["BoltedTo"], ("A", "B"), now, prev) == 1.0
    # A is free of two partners at t-1, so the count leaf gives 1/2
    assert eval_fopt(m.transition["BoltedTo"], ("A", "C"), now, prev) == pytest.approx(0.5)
    assert eval_fopt(m.transition["BoltedTo"], ("B", "C"), now, prev) == pytest.approx(1 / 3)


@pytest.mark.parametrize("partners,expected", [
    ((), 1.0), (("B",), 1.0), (("B", "C"), 0.0), (("B", "C", "D"), 0.0)])
def test_mutex(partners, expected):
    m = parse_model(MUTEX)
    facts = [("WeldedTo", ("A", p)) for p in partners[:1]]
    facts += [("BoltedTo", ("A", p)) for p in partners[1:]]
    s = WorldState(m.vocabulary, 0, facts)
    assert eval_fopt(m.initial["Mutex"], ("A",), s) == expected


def test_query_mismatch(color_model):
    s = colors(color_model, {})
    with pytest.raises(EvaluationError):
        eval_fopt(color_model.initial["BoltedTo"], GroundPredicate("Color", ("P1", "Red"), 0), s)
    with pytest.raises(EvaluationError):
        eval_fopt(color_model.initial["BoltedTo"], ("P1",), s)


def test_zero_denominator_is_an_error():
    m = parse_model(PERSIST)
    v = m.vocabulary
    leaf = Leaf(Ratio(1, CountTerm("w", "part", Not(Atom("BoltedTo", (x, Var("w")), lag=1)))))
    pm = PredicateModel("BoltedTo", ("x", "y"), (("BoltedTo", 1),), Fopt(leaf))
    prev = WorldState(v, 0, [("BoltedTo", ("A", p)) for p in "ABC"])
    with pytest.raises(EvaluationError, match="zero denominator"):
        eval_fopt(pm, ("A", "B"), WorldState(v, 1, []), prev)


def test_leaf_rejects_out_of_range_constant():
    with pytest.raises(ValueError, match="out of range"):
        Const(1.3)


def test_self_reference_sees_only_preceding_groundings(tiny_model):
    pm = tiny_model.initial["AttachedTo"]
    v = tiny_model.vocabulary
    s = WorldState(v, 0, [("AttachedTo", ("P1", "N2"))])
    # N1 precedes N2, so the fact at N2 is hidden from the N1 query
    assert eval_fopt(pm, ("P1", "N1"), s) == pytest.approx(0.2)
    assert eval_fopt(pm, ("P1", "N3"), s) == 0.0


# -- witness propagation ------------------------------------------------------

def reporting_tree():
    """Leaves encode which colour the existential bound."""
    report = Interior(TermEq(c, "Red"), Leaf(Const(0.25)),
                      Interior(TermEq(c, "Blue"), Leaf(Const(0.75)), Leaf(Const(0.5))))
    inner = Interior(Atom("Color", (y, c)), report, Leaf(Const(0.0)))
    root = Interior(Exists("c", "color", Atom("Color", (x, c))), inner, Leaf(Const(1.0)),
                    binds=("c",))
    return PredicateModel("Q", ("x", "y"), (("Color", 0),), Fopt(root))


@pytest.mark.parametrize("x_colors,y_colors,expected", [
    (("Red",), ("Red",), 0.25),
    (("Blue",), ("Blue",), 0.75),
    (("Blue",), ("Red",), 0.0),
    (("Red", "Blue"), ("Red", "Blue"), 0.25),  # least witness is Red
    (("Red", "Blue"), ("Blue",), 0.0),
    ((), ("Red",), 1.0),
])
def test_witness_binding_reaches_descendants(color_model, x_colors, y_colors, expected):
    facts = [("Color", ("P1", k)) for k in x_colors] + [("Color", ("P2", k)) for k in y_colors]
    s = WorldState(color_model.vocabulary, 0, facts)
    assert eval_fopt(reporting_tree(), ("P1", "P2"), s) == expected


# -- acyclicity ---------------------------------------------------------------

def two_pred_model(a_parents, b_parents):
    vocab = Vocabulary({"obj": ["O1", "O2"]},
                       [PredicateSignature("A", ("obj",)), PredicateSignature("B", ("obj",))])
    order = Ordering.from_vocabulary(vocab, ["A", "B"])
    leaf = Fopt(Leaf(Const(0.5)))
    init = {"A": PredicateModel("A", ("x",), (), leaf), "B": PredicateModel("B", ("x",), (), leaf)}
    trans = {"A": PredicateModel("A", ("x",), a_parents, leaf),
             "B": PredicateModel("B", ("x",), b_parents, leaf)}
    return Rdbn(vocab, order, init, trans)


def test_same_slice_cycle_is_reported():
    diags = validate_acyclic(two_pred_model((("B", 0),), (("A", 0),)))
    text = "\n".join(d.message for d in diags)
    assert "cycle" in text
    assert "A" in text and "B" in text
    assert any("B of A" in d.message for d in diags)


def test_lagged_parents_only_is_ok():
    assert validate_acyclic(two_pred_model((("A", 1), ("B", 1)), (("A", 1), ("B", 1)))) == []


def test_respecting_order_is_ok():
    assert validate_acyclic(two_pred_model((), (("A", 0),))) == []


def test_assembly_model_is_acyclic(models_dir):
    from rdbn import load_model
    m = load_model(models_dir / "assembly_small.rdbn")
    assert validate_acyclic(m) == []
    assert [d for d in check_model(m) if d.severity == "error"] == []


# -- grounding ----------------------------------------------------------------

def test_single_predicate_groundings_in_constant_order():
    m = parse_model("""
type obj: O1 O2 O3
predicate Hot(obj) uncertain
initial Hot(x)
  leaf 0.5
end
transition Hot(x)
  parents Hot@t-1
  leaf 0.5
end
""")
    prev = WorldState(m.vocabulary, 0, [])
    out = ground_transition(m, prev, WorldState(m.vocabulary, 1, []))
    assert [g.args for g, _ in out] == [("O1",), ("O2",), ("O3",)]
    assert all(g.time == 1 and p == 0.5 for g, p in out)


def test_all_certain_model_has_no_groundings():
    m = parse_model("type obj: O1 O2\npredicate Heat(obj) certain event\n")
    assert ground_transition(m, None, WorldState(m.vocabulary, 0, [])) == []


def test_smaller_predicate_groundings_come_first(tiny_model):
    prev = WorldState(tiny_model.vocabulary, 0, [])
    preds = [g.pred for g, _ in ground_transition(tiny_model, prev,
                                                  WorldState(tiny_model.vocabulary, 1, []))]
    assert preds == ["Hot"] * 2 + ["AttachedTo"] * 6


# -- joint factorization ------------------------------------------------------

def factor_product(model, prev, facts, time):
    state = WorldState(model.vocabulary, time, facts)
    out = 1.0
    for g, p in ground_transition(model, prev, state):
        out *= p if g.key in state.facts else 1 - p
    return out


@pytest.mark.parametrize("prev_facts,events", [
    ((), ()),
    ((("Hot", ("P1",)), ("AttachedTo", ("P2", "N3"))), (("Heat", ("P2",)),)),
    ((("Hot", ("P2",)),), (("Attach", ("P1", "N2")), ("Attach", ("P2", "N1")))),
])
def test_joint_factorization_matches_oracle(tiny_model, prev_facts, events):
    v = tiny_model.vocabulary
    prev = WorldState(v, 0, prev_facts)
    order = transition_groundings(tiny_model)
    assert len(order) <= 10
    total = 0.0
    worst = 0.0
    for bits in itertools.product((0, 1), repeat=len(order)):
        facts = set(events) | {g for g, b in zip(order, bits) if b}
        mine = factor_product(tiny_model, prev, facts, 1)
        worst = max(worst, abs(mine - tiny_transition(set(prev_facts), set(events), facts)))
        total += mine
    assert worst <= 1e-12
    assert total == pytest.approx(1.0, abs=1e-12)


def test_slice_outcomes_match_factor_product(tiny_model):
    v = tiny_model.vocabulary
    prev = WorldState(v, 0, [("Hot", ("P1",))])
    events = {("Attach", ("P1", "N1"))}
    outcomes = slice_outcomes(tiny_model, prev, events, 1)
    assert sum(p for _, p in outcomes) == pytest.approx(1.0, abs=1e-12)
    for facts, p in outcomes:
        assert p == pytest.approx(factor_product(tiny_model, prev, facts, 1), abs=1e-12)


def test_initial_color_factorization(color_model):
    """Two of three parts: colours are independent fair coins, bolts follow the tree."""
    v = color_model.vocabulary
    order = [(p, a) for p, a in transition_groundings(color_model)
             if all(o in ("P1", "P2", "Red", "Blue") for o in a)]
    state_base = set()
    worst = 0.0
    for bits in itertools.product((0, 1), repeat=len(order)):
        facts = state_base | {g for g, b in zip(order, bits) if b}
        ours = 1.0
        s = WorldState(v, 0, facts)
        for pred, args in order:
            p = eval_fopt(color_model.initial[pred], args, s)
            ours *= p if (pred, args) in facts else 1 - p
        oracle = 0.5 ** 4
        for a, b in itertools.product(("P1", "P2"), repeat=2):
            if a == b:
                q = 0.0
            else:
                shared = any(("Color", (a, k)) in facts and ("Color", (b, k)) in facts
                             for k in ("Red", "Blue"))
                q = 0.3 if shared else 0.05
            oracle *= q if ("BoltedTo", (a, b)) in facts else 1 - q
        worst = max(worst, abs(ours - oracle))
    assert worst <= 1e-12


# -- fuzz ---------------------------------------------------------------------

FUZZ_VOCAB = Vocabulary(
    {"obj": ["O1", "O2", "O3"], "color": ["Red", "Blue"]},
    [PredicateSignature("Hot", ("obj",)),
     PredicateSignature("Color", ("obj", "color"), functional=True),
     PredicateSignature("Link", ("obj", "obj"), kind="complex")])


def random_formula(rng, bound, depth):
    roll = rng.integers(6) if depth > 0 else rng.integers(2)
    if roll == 0:
        return Atom("Hot", (Var(bound[rng.integers(len(bound))]),), lag=int(rng.integers(2)))
    if roll == 1:
        a, b = (Var(bound[rng.integers(len(bound))]) for _ in range(2))
        return Atom("Link", (a, b), lag=int(rng.integers(2)))
    if roll == 2:
        return Not(random_formula(rng, bound, depth - 1))
    if roll == 3:
        return And((random_formula(rng, bound, depth - 1), random_formula(rng, bound, depth - 1)))
    if roll == 4:
        return Or((random_formula(rng, bound, depth - 1), random_formula(rng, bound, depth - 1)))
    v = f"q{depth}"
    return Exists(v, "obj", random_formula(rng, bound + [v], depth - 1))


def random_expr(rng, bound, depth=2):
    roll = rng.integers(4) if depth > 0 else 0
    if roll == 0:
        return Const(float(rng.random()))
    if roll == 1:
        return Ratio(int(rng.integers(0, 4)), CountTerm("w", "obj", random_formula(rng, bound + ["w"], 1)))
    if roll == 2:
        return Product(tuple(random_expr(rng, bound, depth - 1) for _ in range(2)))
    count = CountTerm("w", "obj", random_formula(rng, bound + ["w"], 1))
    return Clamp(Product((Const(float(rng.random())), Ratio(int(rng.integers(1, 5)), count))))


def random_tree(rng, bound, depth):
    if depth == 0 or rng.random() < 0.3:
        return Leaf(random_expr(rng, bound))
    return Interior(random_formula(rng, bound, 2), random_tree(rng, bound, depth - 1),
                    random_tree(rng, bound, depth - 1))


def random_state(rng, t):
    facts = [("Hot", (o,)) for o in FUZZ_VOCAB.constants["obj"] if rng.random() < 0.5]
    facts += [("Link", (a, b)) for a in FUZZ_VOCAB.constants["obj"]
              for b in FUZZ_VOCAB.constants["obj"] if rng.random() < 0.3]
    return WorldState(FUZZ_VOCAB, t, facts)


def fopt_fuzz(cases, seed=7):
    """Evaluate random trees; every value lies in [0, 1] and the only
    failure is a zero denominator.  Returns (evaluated, zero-denominator)."""
    rng = np.random.default_rng(seed)
    evaluated = errors = 0
    for _ in range(cases):
        pm = PredicateModel("Link", ("x", "y"), (), Fopt(random_tree(rng, ["x", "y"], 3)))
        args = tuple(rng.choice(FUZZ_VOCAB.constants["obj"], 2))
        try:
            p = eval_fopt(pm, args, random_state(rng, 1), random_state(rng, 0))
        except EvaluationError as e:
            assert "zero denominator" in str(e)
            errors += 1
            continue
        assert 0.0 <= p <= 1.0
        evaluated += 1
    return evaluated, errors


def test_eval_fopt_in_unit_interval_fuzz():
    evaluated, errors = fopt_fuzz(10_000)
    assert evaluated + errors == 10_000
    assert evaluated > 5000
