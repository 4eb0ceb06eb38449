import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdbn import GroundPredicate, Ordering, PredicateSignature, Vocabulary, VocabularyError, \
    WorldState, precedes


def make_vocab():
    return Vocabulary(
        {"obj": ["c1", "c2", "c3", "c4"], "color": ["red", "blue"]},
        [PredicateSignature("R", ("obj",)),
         PredicateSignature("Color", ("obj", "color"), functional=True),
         PredicateSignature("Link", ("obj", "obj"), kind="complex")])


VOCAB = make_vocab()
ORDER = Ordering.from_vocabulary(VOCAB, ["R", "Color", "Link"])


def ground_strategy():
    objs = st.sampled_from(VOCAB.constants["obj"])
    time = st.integers(0, 3)
    return st.one_of(
        st.builds(lambda a, t: GroundPredicate("R", (a,), t), objs, time),
        st.builds(lambda a, c, t: GroundPredicate("Color", (a, c), t), objs,
                  st.sampled_from(VOCAB.constants["color"]), time),
        st.builds(lambda a, b, t: GroundPredicate("Link", (a, b), t), objs, objs, time))


def test_time_comes_first():
    a = GroundPredicate("Link", ("c4", "c4"), 3)
    b = GroundPredicate("R", ("c1",), 4)
    assert precedes(a, b, ORDER)
    assert precedes(GroundPredicate("R", ("c1",), 3), GroundPredicate("R", ("c1",), 4), ORDER)


def test_irreflexive():
    g = GroundPredicate("Link", ("c2", "c1"), 1)
    assert not precedes(g, g, ORDER)


def test_lexicographic_arguments():
    a = GroundPredicate("Link", ("c2", "c1"), 0)
    b = GroundPredicate("Link", ("c1", "c2"), 0)
    assert not precedes(a, b, ORDER)
    assert precedes(b, a, ORDER)


def test_predicate_order_within_a_slice():
    assert precedes(GroundPredicate("R", ("c4",), 2), GroundPredicate("Color", ("c1", "red"), 2),
                    ORDER)


def test_foreign_predicate_rejected():
    with pytest.raises(VocabularyError):
        precedes(GroundPredicate("Nope", ("c1",)), GroundPredicate("R", ("c1",)), ORDER)
    with pytest.raises(VocabularyError):
        precedes(GroundPredicate("R", ("red",)), GroundPredicate("R", ("c1",)), ORDER)


def test_strict_total_order_exhaustive():
    # every ground predicate of four slices: 112 ** 2 ordered pairs
    ground = [GroundPredicate(p, a, t) for t in range(4) for p in ORDER.predicate_order
              for a in VOCAB.groundings(p)]
    n = 0
    for a, b in itertools.product(ground, repeat=2):
        ab, ba = precedes(a, b, ORDER), precedes(b, a, ORDER)
        if a == b:
            assert not ab and not ba
        else:
            assert ab != ba
        n += 1
    assert n >= 10_000
    ranked = sorted(ground, key=lambda g: ORDER.sort_key(g.pred, g.args, g.time))
    for x, y in zip(ranked, ranked[1:]):
        assert precedes(x, y, ORDER)


def test_transitive_on_random_triples():
    ground = [GroundPredicate(p, a, t) for t in range(3) for p in ORDER.predicate_order
              for a in VOCAB.groundings(p)]
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        a, b, c = (ground[i] for i in rng.integers(len(ground), size=3))
        if precedes(a, b, ORDER) and precedes(b, c, ORDER):
            assert precedes(a, c, ORDER)


@given(ground_strategy(), ground_strategy())
def test_antisymmetric(a, b):
    assert not (precedes(a, b, ORDER) and precedes(b, a, ORDER))


def test_vocabulary_invariants():
    with pytest.raises(VocabularyError):
        Vocabulary({"obj": ["a", "a"]}, [])
    with pytest.raises(VocabularyError):
        Vocabulary({"obj": ["a"]}, [PredicateSignature("P", ("thing",))])
    with pytest.raises(VocabularyError):
        PredicateSignature("P", ("obj",), kind="complex")
    with pytest.raises(VocabularyError):
        Ordering.from_vocabulary(VOCAB, ["R", "Color"])


def test_groundings_in_constant_order():
    assert VOCAB.groundings("R") == [("c1",), ("c2",), ("c3",), ("c4",)]
    assert VOCAB.groundings("Link")[:3] == [("c1", "c1"), ("c1", "c2"), ("c1", "c3")]


@given(st.sets(st.tuples(st.sampled_from(VOCAB.constants["obj"]),
                         st.sampled_from(VOCAB.constants["obj"]))),
       st.dictionaries(st.sampled_from(VOCAB.constants["obj"]),
                       st.sampled_from(VOCAB.constants["color"])))
def test_indexes_derive_from_facts(links, colors):
    facts = [("Link", p) for p in links] + [("Color", (o, c)) for o, c in colors.items()]
    s = WorldState(VOCAB, 0, facts)
    assert s.attribute_index == {("Color", o): c for o, c in colors.items()}
    rebuilt = {(a, b) for a, partners in s.relation_index.get("Link", {}).items()
               for b in partners}
    assert rebuilt == set(links)
    for o in VOCAB.constants["obj"]:
        assert s.value("Color", o) == colors.get(o)


def test_closed_world_and_copy_on_write():
    s = WorldState(VOCAB, 0, [("R", ("c1",))])
    assert s.holds("R", ("c1",)) and not s.holds("R", ("c2",))
    t = s.updated(add=[("R", ("c2",))], remove=[("R", ("c1",))])
    assert s.holds("R", ("c1",)) and t.holds("R", ("c2",)) and not t.holds("R", ("c1",))


def test_validated_state_checks_types():
    with pytest.raises(VocabularyError):
        WorldState.validated(VOCAB, 0, [("Color", ("c1", "c2"))])
