"""Relational dynamic Bayesian networks and particle-filter inference."""

from .relational import (GroundPredicate, Ordering, PredicateSignature, Vocabulary,
                         VocabularyError, WorldState, precedes)
from .logic import (And, Atom, CountCmp, EvaluationError, Exists, Forall, Not, Or,
                    TermEq, TermLt, Var, count_satisfying, evaluate)
from .model import (Clamp, Const, CountTerm, Fopt, Interior, Leaf, PredicateModel,
                    Product, Ratio, Rdbn, eval_fopt, ground_transition, sample_slice,
                    validate_acyclic)
from .language import ModelSyntaxError, format_model, load_model, parse_model

__version__ = "0.1.0"
